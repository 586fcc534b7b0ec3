import { describe, expect, it } from "vitest"

import { StallInfo, Summary } from "../src/api.js"
import { StatusBoard, statusColor } from "../src/statusBoard.js"

function stall(id: number, status: StallInfo["status"], camera = "cam1"): StallInfo {
  return {
    stall_id: id,
    bbox: { x: 10 * id, y: 0, w: 10, h: 10 },
    camera_id: camera,
    status,
    updated_at: null,
  }
}

const FIXTURE: { summary: Summary; stalls: StallInfo[] } = {
  summary: { free: 1, total: 3, unknown: 1 },
  stalls: [stall(1, "vacant"), stall(2, "occupied"), stall(3, "unknown")],
}

describe("header", () => {
  it("shows free/total exactly as the seeded fixture", () => {
    const board = new StatusBoard()
    board.apply(FIXTURE.summary, FIXTURE.stalls)
    expect(board.header()).toBe("1 / 3")
    expect(board.unknownCount()).toBe(1)
  })

  it("shows a placeholder before the first poll", () => {
    expect(new StatusBoard().header()).toBe("- / -")
  })

  it("unknown stalls are not counted free", () => {
    const board = new StatusBoard()
    board.apply({ free: 0, total: 2, unknown: 2 }, [stall(1, "unknown"), stall(2, "unknown")])
    expect(board.header()).toBe("0 / 2")
  })
})

describe("overlays", () => {
  it("colors by status: green vacant, red occupied, gray unknown", () => {
    const board = new StatusBoard()
    board.apply(FIXTURE.summary, FIXTURE.stalls)
    const colors = board.overlays().map((o) => o.color)
    expect(colors).toEqual([statusColor("vacant"), statusColor("occupied"), statusColor("unknown")])
    expect(new Set(colors).size).toBe(3)
  })

  it("updates when a stall changes status between polls", () => {
    const board = new StatusBoard()
    board.apply(FIXTURE.summary, FIXTURE.stalls)
    const before = board.overlays()[0].color
    board.apply({ free: 0, total: 3, unknown: 1 }, [
      stall(1, "occupied"),
      stall(2, "occupied"),
      stall(3, "unknown"),
    ])
    expect(board.overlays()[0].color).not.toBe(before)
    expect(board.overlays()[0].color).toBe(statusColor("occupied"))
  })

  it("filters to one camera when asked", () => {
    const board = new StatusBoard()
    board.apply(FIXTURE.summary, [stall(1, "vacant", "cam1"), stall(2, "vacant", "cam2")])
    expect(board.overlays("cam1").map((o) => o.stallId)).toEqual([1])
  })
})

describe("transient errors", () => {
  it("keeps the last data and raises the stale flag", () => {
    const board = new StatusBoard()
    board.apply(FIXTURE.summary, FIXTURE.stalls)
    board.markError()
    expect(board.stale).toBe(true)
    expect(board.header()).toBe("1 / 3")
    expect(board.overlays()).toHaveLength(3)
  })

  it("clears the stale flag on the next successful poll", () => {
    const board = new StatusBoard()
    board.apply(FIXTURE.summary, FIXTURE.stalls)
    board.markError()
    board.apply(FIXTURE.summary, FIXTURE.stalls)
    expect(board.stale).toBe(false)
  })
})
