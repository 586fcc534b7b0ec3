// Draft state for stall ROI editing. All rects are in image pixel space;
// gestures arrive already translated from screen coordinates. Drafts round to
// whole pixels when a gesture ends, so what is saved is exactly what is shown,
// and a reload after save reproduces every rect bit for bit.

import { ApiError, StallInfo } from "./api.js"
import {
  clampRect,
  cornerPoint,
  hitCorner,
  oppositeCorner,
  Point,
  Rect,
  rectContains,
  rectFromCorners,
  roundRect,
} from "./geometry.js"

export interface RoiDraft {
  stallId: number
  rect: Rect
  cameraId: string
  dirty: boolean
  pendingDelete: boolean
  persisted: boolean // exists server-side (loaded, or PUT succeeded)
  status: string
}

interface Gesture {
  kind: "draw" | "move" | "resize"
  stallId: number
  start: Point
  fixed?: Point // resize: the corner that stays put
  orig?: Rect // move/resize: rect at gesture start
}

export interface SaveOutcome {
  saved: number[]
  deleted: number[]
  errors: { stallId: number; error: ApiError }[]
}

/** The slice of the API client the editor needs (ApiClient satisfies it). */
export interface StallWriter {
  putStall(lot: string, stallId: number, bbox: Rect, cameraId: string): Promise<StallInfo>
  deleteStall(lot: string, stallId: number): Promise<{ deleted: boolean }>
}

export class RoiEditor {
  readonly drafts = new Map<number, RoiDraft>()
  frameW = 0
  frameH = 0
  private gesture: Gesture | null = null
  private nextId = 1

  constructor(readonly cameraId: string) {}

  /** Replace clean drafts with server state; local dirty edits survive a poll. */
  loadStalls(stalls: StallInfo[], frameW: number, frameH: number) {
    this.frameW = frameW
    this.frameH = frameH
    const dirtyKept = [...this.drafts.values()].filter((d) => d.dirty)
    this.drafts.clear()
    for (const s of stalls) {
      if (s.camera_id !== this.cameraId) continue
      this.drafts.set(s.stall_id, {
        stallId: s.stall_id,
        rect: { ...s.bbox },
        cameraId: s.camera_id,
        dirty: false,
        pendingDelete: false,
        persisted: true,
        status: s.status,
      })
      this.nextId = Math.max(this.nextId, s.stall_id + 1)
    }
    for (const d of dirtyKept) {
      this.drafts.set(d.stallId, d)
      this.nextId = Math.max(this.nextId, d.stallId + 1)
    }
  }

  visibleDrafts(): RoiDraft[] {
    return [...this.drafts.values()].filter((d) => !d.pendingDelete)
  }

  dirtyDrafts(): RoiDraft[] {
    return [...this.drafts.values()].filter((d) => d.dirty)
  }

  hasDirty(): boolean {
    return this.dirtyDrafts().length > 0
  }

  /** Start a gesture at an image-space point: resize near a corner, move inside
   *  a rect, otherwise begin drawing a new ROI. `handleRadius` is in image px. */
  beginGesture(p: Point, handleRadius: number): Gesture["kind"] {
    for (const d of this.visibleDrafts()) {
      const corner = hitCorner(d.rect, p, handleRadius)
      if (corner) {
        this.gesture = {
          kind: "resize",
          stallId: d.stallId,
          start: p,
          fixed: cornerPoint(d.rect, oppositeCorner(corner)),
          orig: { ...d.rect },
        }
        return "resize"
      }
    }
    for (const d of this.visibleDrafts()) {
      if (rectContains(d.rect, p)) {
        this.gesture = { kind: "move", stallId: d.stallId, start: p, orig: { ...d.rect } }
        return "move"
      }
    }
    const stallId = this.nextId++
    this.drafts.set(stallId, {
      stallId,
      rect: { x: p.x, y: p.y, w: 0, h: 0 },
      cameraId: this.cameraId,
      dirty: true,
      pendingDelete: false,
      persisted: false,
      status: "unknown",
    })
    this.gesture = { kind: "draw", stallId, start: p }
    return "draw"
  }

  updateGesture(p: Point) {
    const g = this.gesture
    if (!g) return
    const d = this.drafts.get(g.stallId)
    if (!d) return
    if (g.kind === "draw") {
      d.rect = rectFromCorners(g.start, p)
    } else if (g.kind === "resize" && g.fixed) {
      d.rect = rectFromCorners(g.fixed, p)
    } else if (g.kind === "move" && g.orig) {
      d.rect = { ...g.orig, x: g.orig.x + (p.x - g.start.x), y: g.orig.y + (p.y - g.start.y) }
    }
  }

  /** Finish the gesture: clamp into the frame, snap to whole pixels, and drop
   *  zero-area results. Returns the affected stall id, or null if dropped. */
  endGesture(): number | null {
    const g = this.gesture
    this.gesture = null
    if (!g) return null
    const d = this.drafts.get(g.stallId)
    if (!d) return null
    d.rect = roundRect(clampRect(d.rect, this.frameW, this.frameH))
    if (d.rect.w < 1 || d.rect.h < 1) {
      if (g.kind === "draw") {
        this.drafts.delete(g.stallId) // zero-area drags never reach the server
      } else if (g.orig) {
        d.rect = g.orig
      }
      return null
    }
    d.dirty = true
    return g.stallId
  }

  gestureActive(): boolean {
    return this.gesture !== null
  }

  deleteRoi(stallId: number) {
    const d = this.drafts.get(stallId)
    if (!d) return
    if (!d.persisted) {
      this.drafts.delete(stallId) // purely local draft: just forget it
      return
    }
    d.pendingDelete = true
    d.dirty = true
  }

  /** Push every dirty draft to the API; dirty clears only on 2xx. */
  async save(api: StallWriter, lotId: string): Promise<SaveOutcome> {
    const outcome: SaveOutcome = { saved: [], deleted: [], errors: [] }
    for (const d of this.dirtyDrafts()) {
      try {
        if (d.pendingDelete) {
          await api.deleteStall(lotId, d.stallId)
          this.drafts.delete(d.stallId)
          outcome.deleted.push(d.stallId)
        } else {
          const stored = await api.putStall(lotId, d.stallId, d.rect, d.cameraId)
          d.rect = { ...stored.bbox }
          d.status = stored.status
          d.dirty = false
          d.persisted = true
          outcome.saved.push(d.stallId)
        }
      } catch (err) {
        if (err instanceof ApiError) {
          outcome.errors.push({ stallId: d.stallId, error: err })
        } else {
          throw err
        }
      }
    }
    return outcome
  }
}
