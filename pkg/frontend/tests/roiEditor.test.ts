import { describe, expect, it } from "vitest"

import { ApiError, StallInfo } from "../src/api.js"
import { Rect, screenToImage } from "../src/geometry.js"
import { RoiEditor, StallWriter } from "../src/roiEditor.js"

const CAM = "cam1"
const LOT = "campus"
const FRAME = { w: 640, h: 360 }

/** In-memory stand-in for the service: stores exactly what a PUT sends. */
class FakeServer implements StallWriter {
  stalls = new Map<number, StallInfo>()
  failWith: ApiError | null = null
  putCalls = 0

  async putStall(lot: string, stallId: number, bbox: Rect, cameraId: string): Promise<StallInfo> {
    this.putCalls++
    if (this.failWith) throw this.failWith
    if (bbox.w <= 0 || bbox.h <= 0) throw new ApiError(422, "invalid_bbox", "bad extent")
    const stored: StallInfo = {
      stall_id: stallId,
      bbox: { ...bbox },
      camera_id: cameraId,
      status: "unknown",
      updated_at: null,
    }
    this.stalls.set(stallId, stored)
    return { ...stored, bbox: { ...stored.bbox } }
  }

  async deleteStall(lot: string, stallId: number): Promise<{ deleted: boolean }> {
    if (this.failWith) throw this.failWith
    if (!this.stalls.delete(stallId)) throw new ApiError(404, "stall_not_found", "no stall")
    return { deleted: true }
  }

  list(): StallInfo[] {
    return [...this.stalls.values()].map((s) => ({ ...s, bbox: { ...s.bbox } }))
  }
}

function drawOnScreen(editor: RoiEditor, zoom: number, from: [number, number], to: [number, number]) {
  const view = { zoom }
  editor.beginGesture(screenToImage({ x: from[0], y: from[1] }, view), 7 / zoom)
  editor.updateGesture(screenToImage({ x: to[0], y: to[1] }, view))
  return editor.endGesture()
}

describe("drawing at zoom", () => {
  it("stores image-pixel coordinates, not screen pixels, at zoom 2x", () => {
    const editor = new RoiEditor(CAM)
    editor.loadStalls([], FRAME.w, FRAME.h)
    const id = drawOnScreen(editor, 2, [40, 60], [100, 140])
    expect(id).not.toBeNull()
    expect(editor.drafts.get(id!)!.rect).toEqual({ x: 20, y: 30, w: 30, h: 40 })
  })

  it("round-trips save and reload with identical image coordinates (zoom 2x)", async () => {
    const server = new FakeServer()
    const editor = new RoiEditor(CAM)
    editor.loadStalls(server.list(), FRAME.w, FRAME.h)
    const id = drawOnScreen(editor, 2, [41, 63], [201, 305])!
    const drawn = { ...editor.drafts.get(id)!.rect }

    const outcome = await editor.save(server, LOT)
    expect(outcome.saved).toEqual([id])
    expect(editor.drafts.get(id)!.dirty).toBe(false)

    const reloaded = new RoiEditor(CAM)
    reloaded.loadStalls(server.list(), FRAME.w, FRAME.h)
    expect(reloaded.drafts.get(id)!.rect).toEqual(drawn)
  })

  it("rejects zero-area drags before any PUT", async () => {
    const server = new FakeServer()
    const editor = new RoiEditor(CAM)
    editor.loadStalls([], FRAME.w, FRAME.h)
    const id = drawOnScreen(editor, 2, [40, 60], [40.4, 60.4])
    expect(id).toBeNull()
    expect(editor.drafts.size).toBe(0)
    await editor.save(server, LOT)
    expect(server.putCalls).toBe(0)
  })

  it("clamps drawings to the frame bounds", () => {
    const editor = new RoiEditor(CAM)
    editor.loadStalls([], FRAME.w, FRAME.h)
    const id = drawOnScreen(editor, 1, [600, 300], [700, 400])!
    expect(editor.drafts.get(id)!.rect).toEqual({ x: 600, y: 300, w: 40, h: 60 })
  })
})

describe("editing existing ROIs", () => {
  function seeded(): { server: FakeServer; editor: RoiEditor } {
    const server = new FakeServer()
    server.stalls.set(1, {
      stall_id: 1,
      bbox: { x: 100, y: 100, w: 50, h: 40 },
      camera_id: CAM,
      status: "vacant",
      updated_at: null,
    })
    const editor = new RoiEditor(CAM)
    editor.loadStalls(server.list(), FRAME.w, FRAME.h)
    return { server, editor }
  }

  it("moves a rect by dragging its body", () => {
    const { editor } = seeded()
    editor.beginGesture({ x: 120, y: 120 }, 3)
    editor.updateGesture({ x: 135, y: 110 })
    editor.endGesture()
    expect(editor.drafts.get(1)!.rect).toEqual({ x: 115, y: 90, w: 50, h: 40 })
    expect(editor.drafts.get(1)!.dirty).toBe(true)
  })

  it("resizes from a corner keeping the opposite corner fixed", () => {
    const { editor } = seeded()
    editor.beginGesture({ x: 150, y: 140 }, 3) // se corner
    editor.updateGesture({ x: 180, y: 170 })
    editor.endGesture()
    expect(editor.drafts.get(1)!.rect).toEqual({ x: 100, y: 100, w: 80, h: 70 })
  })

  it("restores the original rect when a resize collapses to zero area", () => {
    const { editor } = seeded()
    editor.beginGesture({ x: 150, y: 140 }, 3)
    editor.updateGesture({ x: 100, y: 100 })
    expect(editor.endGesture()).toBeNull()
    expect(editor.drafts.get(1)!.rect).toEqual({ x: 100, y: 100, w: 50, h: 40 })
  })

  it("deletes persisted stalls through the API on save", async () => {
    const { server, editor } = seeded()
    editor.deleteRoi(1)
    expect(editor.visibleDrafts()).toHaveLength(0)
    const outcome = await editor.save(server, LOT)
    expect(outcome.deleted).toEqual([1])
    expect(server.list()).toHaveLength(0)
  })

  it("discards never-saved drafts locally on delete", async () => {
    const server = new FakeServer()
    const editor = new RoiEditor(CAM)
    editor.loadStalls([], FRAME.w, FRAME.h)
    const id = drawOnScreen(editor, 1, [10, 10], [50, 50])!
    editor.deleteRoi(id)
    expect(editor.drafts.size).toBe(0)
    await editor.save(server, LOT)
    expect(server.putCalls).toBe(0)
  })
})

describe("save failure handling", () => {
  it("keeps drafts dirty on 422 and surfaces the error", async () => {
    const server = new FakeServer()
    const editor = new RoiEditor(CAM)
    editor.loadStalls([], FRAME.w, FRAME.h)
    const id = drawOnScreen(editor, 1, [10, 10], [60, 60])!
    server.failWith = new ApiError(422, "invalid_bbox", "w must be positive")
    const outcome = await editor.save(server, LOT)
    expect(outcome.errors).toHaveLength(1)
    expect(outcome.errors[0].error.code).toBe("invalid_bbox")
    expect(editor.drafts.get(id)!.dirty).toBe(true)
  })

  it("keeps drafts dirty on 401 so a retry with a token can succeed", async () => {
    const server = new FakeServer()
    const editor = new RoiEditor(CAM)
    editor.loadStalls([], FRAME.w, FRAME.h)
    const id = drawOnScreen(editor, 1, [10, 10], [60, 60])!
    server.failWith = new ApiError(401, "unauthorized", "missing token")
    let outcome = await editor.save(server, LOT)
    expect(outcome.errors[0].error.status).toBe(401)
    expect(editor.hasDirty()).toBe(true)

    server.failWith = null
    outcome = await editor.save(server, LOT)
    expect(outcome.saved).toEqual([id])
    expect(editor.hasDirty()).toBe(false)
  })
})

describe("poll refresh", () => {
  it("clean drafts follow the server; dirty drafts survive", () => {
    const server = new FakeServer()
    server.stalls.set(1, {
      stall_id: 1,
      bbox: { x: 0, y: 0, w: 10, h: 10 },
      camera_id: CAM,
      status: "vacant",
      updated_at: null,
    })
    const editor = new RoiEditor(CAM)
    editor.loadStalls(server.list(), FRAME.w, FRAME.h)
    const id = drawOnScreen(editor, 1, [100, 100], [150, 150])! // unsaved local draft

    server.stalls.get(1)!.bbox = { x: 5, y: 5, w: 10, h: 10 }
    editor.loadStalls(server.list(), FRAME.w, FRAME.h)
    expect(editor.drafts.get(1)!.rect).toEqual({ x: 5, y: 5, w: 10, h: 10 })
    expect(editor.drafts.get(id)!.dirty).toBe(true)
  })

  it("ignores stalls bound to other cameras", () => {
    const editor = new RoiEditor(CAM)
    editor.loadStalls(
      [
        {
          stall_id: 9,
          bbox: { x: 0, y: 0, w: 5, h: 5 },
          camera_id: "other-cam",
          status: "vacant",
          updated_at: null,
        },
      ],
      FRAME.w,
      FRAME.h,
    )
    expect(editor.drafts.size).toBe(0)
  })
})
