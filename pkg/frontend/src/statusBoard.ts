// Live status view state: the latest summary + stall list from the API, a
// free/total header, and colored overlays. Never classifies anything itself;
// a failed poll keeps the last data and raises a stale flag.

import { StallInfo, StallStatus, Summary } from "./api.js"
import { Rect } from "./geometry.js"

export const STATUS_COLORS: Record<StallStatus, string> = {
  vacant: "#2e9e44",
  occupied: "#d23c3c",
  unknown: "#8a8a8a",
}

export function statusColor(status: StallStatus): string {
  return STATUS_COLORS[status] ?? STATUS_COLORS.unknown
}

export interface Overlay {
  stallId: number
  rect: Rect
  color: string
  status: StallStatus
}

export class StatusBoard {
  summary: Summary | null = null
  stalls: StallInfo[] = []
  stale = false

  apply(summary: Summary, stalls: StallInfo[]) {
    this.summary = summary
    this.stalls = stalls
    this.stale = false
  }

  /** A poll failed: keep the last data, flag it as stale. */
  markError() {
    this.stale = true
  }

  /** "free / total" as shown in the header; unknown stalls never count as free. */
  header(): string {
    if (!this.summary) return "- / -"
    return `${this.summary.free} / ${this.summary.total}`
  }

  unknownCount(): number {
    return this.summary?.unknown ?? 0
  }

  overlays(cameraId?: string): Overlay[] {
    return this.stalls
      .filter((s) => cameraId === undefined || s.camera_id === cameraId)
      .map((s) => ({
        stallId: s.stall_id,
        rect: s.bbox,
        color: statusColor(s.status),
        status: s.status,
      }))
  }
}
