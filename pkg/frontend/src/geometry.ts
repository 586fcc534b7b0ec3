// Rectangles and the screen <-> image coordinate mapping.
//
// ROIs live in image pixel space; the canvas shows the frame scaled by the
// current zoom. Mapping is pure scaling, so screen -> image -> screen is an
// exact identity (well within the 0.5 px contract) at any zoom.

export interface Point {
  x: number
  y: number
}

export interface Rect {
  x: number
  y: number
  w: number
  h: number
}

export interface Viewport {
  zoom: number
}

export function screenToImage(p: Point, view: Viewport): Point {
  return { x: p.x / view.zoom, y: p.y / view.zoom }
}

export function imageToScreen(p: Point, view: Viewport): Point {
  return { x: p.x * view.zoom, y: p.y * view.zoom }
}

export function rectToScreen(r: Rect, view: Viewport): Rect {
  const tl = imageToScreen({ x: r.x, y: r.y }, view)
  return { x: tl.x, y: tl.y, w: r.w * view.zoom, h: r.h * view.zoom }
}

/** Normalize a drag between two corners into a rect with non-negative extent. */
export function rectFromCorners(a: Point, b: Point): Rect {
  return {
    x: Math.min(a.x, b.x),
    y: Math.min(a.y, b.y),
    w: Math.abs(a.x - b.x),
    h: Math.abs(a.y - b.y),
  }
}

/** Clamp a rect into [0,0,width,height], preserving as much area as possible. */
export function clampRect(r: Rect, width: number, height: number): Rect {
  const x0 = Math.min(Math.max(r.x, 0), width)
  const y0 = Math.min(Math.max(r.y, 0), height)
  const x1 = Math.min(Math.max(r.x + r.w, 0), width)
  const y1 = Math.min(Math.max(r.y + r.h, 0), height)
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
}

/** Round to whole image pixels (the wire format for bounding boxes). */
export function roundRect(r: Rect): Rect {
  const x = Math.round(r.x)
  const y = Math.round(r.y)
  return { x, y, w: Math.round(r.x + r.w) - x, h: Math.round(r.y + r.h) - y }
}

export function rectContains(r: Rect, p: Point): boolean {
  return p.x >= r.x && p.x <= r.x + r.w && p.y >= r.y && p.y <= r.y + r.h
}

export type Corner = "nw" | "ne" | "sw" | "se"

export function cornerPoint(r: Rect, corner: Corner): Point {
  switch (corner) {
    case "nw":
      return { x: r.x, y: r.y }
    case "ne":
      return { x: r.x + r.w, y: r.y }
    case "sw":
      return { x: r.x, y: r.y + r.h }
    case "se":
      return { x: r.x + r.w, y: r.y + r.h }
  }
}

/** The corner diagonally opposite the one being dragged stays fixed. */
export function oppositeCorner(corner: Corner): Corner {
  return ({ nw: "se", ne: "sw", sw: "ne", se: "nw" } as const)[corner]
}

/** Pick a corner handle within `radius` image px of the point, if any. */
export function hitCorner(r: Rect, p: Point, radius: number): Corner | null {
  for (const corner of ["nw", "ne", "sw", "se"] as const) {
    const c = cornerPoint(r, corner)
    if (Math.abs(c.x - p.x) <= radius && Math.abs(c.y - p.y) <= radius) return corner
  }
  return null
}
