// Thin client for the occupancy service HTTP API. All state lives server-side;
// the admin token is held in memory only and sent on mutating requests.

import type { Rect } from "./geometry.js"

export type StallStatus = "vacant" | "occupied" | "unknown"

export interface LotInfo {
  lot_id: string
  display_name: string
  camera_ids: string[]
}

export interface StallInfo {
  stall_id: number
  bbox: Rect
  camera_id: string
  status: StallStatus
  updated_at: string | null
}

export interface Summary {
  free: number
  total: number
  unknown: number
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message)
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

export class ApiClient {
  private token: string | null = null

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  setToken(token: string | null) {
    this.token = token
  }

  hasToken(): boolean {
    return this.token !== null && this.token !== ""
  }

  private async request<T>(path: string, init: RequestInit = {}, admin = false): Promise<T> {
    const headers: Record<string, string> = { ...(init.headers as Record<string, string>) }
    if (init.body !== undefined) headers["Content-Type"] = "application/json"
    if (admin && this.token) headers["X-Admin-Token"] = this.token
    const resp = await this.fetchFn(this.baseUrl + path, { ...init, headers })
    if (!resp.ok) {
      let code = "http_error"
      let message = `HTTP ${resp.status}`
      try {
        const body = await resp.json()
        code = body.code ?? code
        message = body.message ?? message
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(resp.status, code, message)
    }
    return (await resp.json()) as T
  }

  getLots(): Promise<LotInfo[]> {
    return this.request("/api/lots")
  }

  getStalls(lot: string): Promise<StallInfo[]> {
    return this.request(`/api/lots/${encodeURIComponent(lot)}/stalls`)
  }

  getSummary(lot: string): Promise<Summary> {
    return this.request(`/api/lots/${encodeURIComponent(lot)}/summary`)
  }

  putStall(lot: string, stallId: number, bbox: Rect, cameraId: string): Promise<StallInfo> {
    return this.request(
      `/api/lots/${encodeURIComponent(lot)}/stalls/${stallId}`,
      { method: "PUT", body: JSON.stringify({ bbox, camera_id: cameraId }) },
      true,
    )
  }

  deleteStall(lot: string, stallId: number): Promise<{ deleted: boolean }> {
    return this.request(
      `/api/lots/${encodeURIComponent(lot)}/stalls/${stallId}`,
      { method: "DELETE" },
      true,
    )
  }

  /** URL of the latest cached frame; timestamp defeats browser caching. */
  frameUrl(lot: string, camera: string): string {
    return (
      `${this.baseUrl}/api/lots/${encodeURIComponent(lot)}/cameras/` +
      `${encodeURIComponent(camera)}/frame?t=${Date.now()}`
    )
  }
}
