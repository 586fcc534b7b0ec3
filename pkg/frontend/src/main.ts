// Browser wiring: canvas rendering, mouse gestures, pollers, token prompt.
// All decision logic lives in the api/geometry/roiEditor/statusBoard modules.

import { ApiClient, LotInfo } from "./api.js"
import { rectToScreen, screenToImage, Viewport } from "./geometry.js"
import { RoiEditor } from "./roiEditor.js"
import { StatusBoard, statusColor } from "./statusBoard.js"

const POLL_INTERVAL_MS = 2000
const HANDLE_SCREEN_PX = 7

type Mode = "edit" | "status"

const $ = <T extends HTMLElement>(id: string): T => document.getElementById(id) as T

class App {
  readonly api = new ApiClient("")
  readonly board = new StatusBoard()
  editor: RoiEditor | null = null
  lots: LotInfo[] = []
  lotId = ""
  cameraId = ""
  mode: Mode = "status"
  view: Viewport = { zoom: 1 }
  frame: HTMLImageElement | null = null
  selected: number | null = null
  saving = false
  private canvas = $<HTMLCanvasElement>("canvas")
  private ctx = this.canvas.getContext("2d")!

  async start() {
    this.bindControls()
    try {
      this.lots = await this.api.getLots()
    } catch (err) {
      this.banner(`API unreachable: ${String(err)}`)
      setTimeout(() => this.start(), POLL_INTERVAL_MS)
      return
    }
    const lotSel = $<HTMLSelectElement>("lot")
    lotSel.innerHTML = ""
    for (const lot of this.lots) {
      const opt = document.createElement("option")
      opt.value = lot.lot_id
      opt.textContent = lot.display_name
      lotSel.appendChild(opt)
    }
    if (this.lots.length) this.selectLot(this.lots[0].lot_id)
    window.setInterval(() => void this.poll(), POLL_INTERVAL_MS)
    void this.poll()
  }

  private bindControls() {
    $<HTMLSelectElement>("lot").addEventListener("change", (e) =>
      this.selectLot(($<HTMLSelectElement>("lot")).value),
    )
    $<HTMLSelectElement>("camera").addEventListener("change", () => {
      this.cameraId = $<HTMLSelectElement>("camera").value
      this.editor = new RoiEditor(this.cameraId)
      this.frame = null
      void this.poll()
    })
    $<HTMLSelectElement>("zoom").addEventListener("change", () => {
      this.view = { zoom: Number($<HTMLSelectElement>("zoom").value) }
      this.render()
    })
    $<HTMLSelectElement>("mode").addEventListener("change", () => {
      this.mode = $<HTMLSelectElement>("mode").value as Mode
      this.selected = null
      this.render()
    })
    $<HTMLButtonElement>("save").addEventListener("click", () => void this.save())
    $<HTMLButtonElement>("delete").addEventListener("click", () => {
      if (this.editor && this.selected !== null) {
        this.editor.deleteRoi(this.selected)
        this.selected = null
        this.render()
      }
    })
    this.canvas.addEventListener("mousedown", (e) => this.onMouseDown(e))
    this.canvas.addEventListener("mousemove", (e) => this.onMouseMove(e))
    window.addEventListener("mouseup", () => this.onMouseUp())
  }

  private selectLot(lotId: string) {
    this.lotId = lotId
    const lot = this.lots.find((l) => l.lot_id === lotId)
    const camSel = $<HTMLSelectElement>("camera")
    camSel.innerHTML = ""
    for (const cam of lot?.camera_ids ?? []) {
      const opt = document.createElement("option")
      opt.value = cam
      opt.textContent = cam
      camSel.appendChild(opt)
    }
    this.cameraId = lot?.camera_ids[0] ?? ""
    this.editor = new RoiEditor(this.cameraId)
    this.frame = null
    void this.poll()
  }

  private async poll() {
    if (!this.lotId || this.saving) return // poller pauses while a save is in flight
    try {
      const [summary, stalls] = await Promise.all([
        this.api.getSummary(this.lotId),
        this.api.getStalls(this.lotId),
      ])
      this.board.apply(summary, stalls)
      if (this.editor && !this.editor.gestureActive()) {
        this.editor.loadStalls(stalls, this.frame?.naturalWidth ?? 0, this.frame?.naturalHeight ?? 0)
      }
      this.banner(null)
    } catch (err) {
      this.board.markError()
      this.banner(`poll failed: ${String(err)} (showing last data)`)
    }
    this.refreshFrame()
    this.renderHeader()
    this.render()
  }

  private refreshFrame() {
    if (!this.lotId || !this.cameraId) return
    const img = new Image()
    img.onload = () => {
      this.frame = img
      if (this.editor) {
        this.editor.frameW = img.naturalWidth
        this.editor.frameH = img.naturalHeight
      }
      this.render()
    }
    img.onerror = () => {
      // 503 before the first successful camera poll: keep the placeholder
      this.frame = null
      this.render()
    }
    img.src = this.api.frameUrl(this.lotId, this.cameraId)
  }

  private async save() {
    if (!this.editor || !this.editor.hasDirty() || this.saving) return
    if (!this.api.hasToken()) {
      const token = window.prompt("Admin token:")
      if (!token) return
      this.api.setToken(token)
    }
    this.saving = true
    try {
      const outcome = await this.editor.save(this.api, this.lotId)
      const auth = outcome.errors.find((e) => e.error.status === 401)
      if (auth) {
        this.api.setToken(null)
        this.banner("token rejected; try saving again")
      } else if (outcome.errors.length) {
        const first = outcome.errors[0]
        this.banner(`stall ${first.stallId}: ${first.error.code} ${first.error.message}`)
      } else {
        this.banner(null)
      }
    } finally {
      this.saving = false
    }
    await this.poll()
  }

  private canvasPoint(e: MouseEvent) {
    const rect = this.canvas.getBoundingClientRect()
    return { x: e.clientX - rect.left, y: e.clientY - rect.top }
  }

  private onMouseDown(e: MouseEvent) {
    if (this.mode !== "edit" || !this.editor) return
    const p = screenToImage(this.canvasPoint(e), this.view)
    const before = [...this.editor.drafts.keys()]
    this.editor.beginGesture(p, HANDLE_SCREEN_PX / this.view.zoom)
    const added = [...this.editor.drafts.keys()].filter((k) => !before.includes(k))
    this.selected = added.length ? added[0] : this.hitStall(p)
    this.render()
  }

  private hitStall(p: { x: number; y: number }): number | null {
    if (!this.editor) return null
    for (const d of this.editor.visibleDrafts()) {
      const r = d.rect
      if (p.x >= r.x && p.x <= r.x + r.w && p.y >= r.y && p.y <= r.y + r.h) return d.stallId
    }
    return null
  }

  private onMouseMove(e: MouseEvent) {
    if (this.mode !== "edit" || !this.editor || !this.editor.gestureActive()) return
    this.editor.updateGesture(screenToImage(this.canvasPoint(e), this.view))
    this.render()
  }

  private onMouseUp() {
    if (this.mode !== "edit" || !this.editor || !this.editor.gestureActive()) return
    const id = this.editor.endGesture()
    if (id !== null) this.selected = id
    this.render()
  }

  private renderHeader() {
    $("free-total").textContent = this.board.header()
    $("stale").textContent = this.board.stale ? "stale" : ""
    const unknown = this.board.unknownCount()
    $("unknown").textContent = unknown ? `${unknown} unknown` : ""
    $<HTMLButtonElement>("save").disabled = !(this.editor?.hasDirty() ?? false)
  }

  private render() {
    const w = this.frame?.naturalWidth ?? 640
    const h = this.frame?.naturalHeight ?? 360
    this.canvas.width = Math.round(w * this.view.zoom)
    this.canvas.height = Math.round(h * this.view.zoom)
    const ctx = this.ctx
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height)
    if (this.frame) {
      ctx.drawImage(this.frame, 0, 0, this.canvas.width, this.canvas.height)
    } else {
      ctx.fillStyle = "#222"
      ctx.fillRect(0, 0, this.canvas.width, this.canvas.height)
      ctx.fillStyle = "#bbb"
      ctx.font = "16px sans-serif"
      ctx.fillText("no frame yet - waiting for the camera poller", 16, 32)
    }
    if (this.mode === "status") {
      for (const o of this.board.overlays(this.cameraId)) {
        const r = rectToScreen(o.rect, this.view)
        ctx.fillStyle = o.color + "55"
        ctx.fillRect(r.x, r.y, r.w, r.h)
        ctx.strokeStyle = o.color
        ctx.lineWidth = 2
        ctx.strokeRect(r.x, r.y, r.w, r.h)
        ctx.fillStyle = "#fff"
        ctx.font = "12px sans-serif"
        ctx.fillText(String(o.stallId), r.x + 4, r.y + 14)
      }
    } else if (this.editor) {
      for (const d of this.editor.visibleDrafts()) {
        const r = rectToScreen(d.rect, this.view)
        ctx.strokeStyle = d.stallId === this.selected ? "#ffd54f" : statusColor(d.status as never)
        ctx.setLineDash(d.dirty ? [6, 4] : [])
        ctx.lineWidth = 2
        ctx.strokeRect(r.x, r.y, r.w, r.h)
        ctx.setLineDash([])
        ctx.fillStyle = "#fff"
        ctx.font = "12px sans-serif"
        ctx.fillText(`${d.stallId}${d.dirty ? "*" : ""}`, r.x + 4, r.y + 14)
        for (const [cx, cy] of [
          [r.x, r.y],
          [r.x + r.w, r.y],
          [r.x, r.y + r.h],
          [r.x + r.w, r.y + r.h],
        ]) {
          ctx.fillStyle = "#ffd54f"
          ctx.fillRect(cx - 3, cy - 3, 6, 6)
        }
      }
    }
  }

  private banner(message: string | null) {
    const el = $("banner")
    el.textContent = message ?? ""
    el.style.display = message ? "block" : "none"
  }
}

new App().start()
