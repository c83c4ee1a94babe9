/**
 * DOM bindings. The readout helpers stringify service numbers without any
 * arithmetic so what the human reads is exactly what the service reported.
 */

import { Report } from './api.js'
import { chart, ChartSize } from './chart.js'
import { SessionController, SessionView } from './controller.js'

const IMAGE_SUFFIXES = ['.png', '.jpg', '.jpeg', '.gif', '.webp', '.svg']

export function isImageRef(ref: string): boolean {
  const lower = ref.toLowerCase().split('?')[0]
  return IMAGE_SUFFIXES.some((ext) => lower.endsWith(ext))
}

export function readout(point: Report): { estimate: string; interval: string; level: string } {
  return {
    estimate: String(point.estimate),
    interval: `[${String(point.ci_lo)}, ${String(point.ci_hi)}]`,
    level: `${point.level * 100}%`,
  }
}

const CHART_SIZE: ChartSize = { width: 640, height: 280, pad: 28 }

export class ConsoleView {
  private targetRadius: number | null = null

  constructor(
    private readonly root: HTMLElement,
    private readonly controller: SessionController,
  ) {}

  bind() {
    this.root.innerHTML = `
      <header><h1>active measurement console</h1></header>
      <section id="controls">
        <select id="pool"></select>
        <input id="seed" type="number" value="0" title="seed" />
        <button id="create">new session</button>
        <select id="resume"><option value="">resume session…</option></select>
        <a id="export" href="#" download hidden>download event log</a>
      </section>
      <section id="card" hidden>
        <div id="payload"></div>
        <div id="ask">
          <label>count <input id="label-input" inputmode="decimal" autocomplete="off" /></label>
          <button id="submit">submit</button>
          <span id="input-error" role="alert"></span>
        </div>
      </section>
      <section id="summary"></section>
      <svg id="chart" width="${CHART_SIZE.width}" height="${CHART_SIZE.height}"></svg>
      <section id="target">
        <label>target radius <input id="target-input" inputmode="decimal" /></label>
        <span class="hint">guide line only; stopping stays with you</span>
      </section>
      <p id="notice" role="status"></p>
    `
    this.el('create').addEventListener('click', () => {
      const pool = (this.el('pool') as HTMLSelectElement).value
      const seed = Number((this.el('seed') as HTMLInputElement).value) || 0
      void this.controller.create({ pool, seed })
    })
    this.el('resume').addEventListener('change', (ev) => {
      const sid = (ev.target as HTMLSelectElement).value
      if (sid) void this.controller.resume(sid)
    })
    const input = this.el('label-input') as HTMLInputElement
    const submit = () => void this.controller.submit(input.value).then((ok) => {
      if (ok) input.value = ''
      input.focus()
    })
    this.el('submit').addEventListener('click', submit)
    input.addEventListener('keydown', (ev) => {
      if ((ev as KeyboardEvent).key === 'Enter') submit()
    })
    const target = this.el('target-input') as HTMLInputElement
    target.addEventListener('input', () => {
      const v = Number(target.value)
      this.targetRadius = Number.isFinite(v) && v > 0 ? v : null
      this.render(this.controller.view)
    })
  }

  private el(id: string): HTMLElement {
    const found = this.root.querySelector(`#${id}`)
    if (!found) throw new Error(`missing element #${id}`)
    return found as HTMLElement
  }

  async populatePools(pools: string[], sessions: { session: string; t: number }[]) {
    const select = this.el('pool') as HTMLSelectElement
    select.innerHTML = pools.map((p) => `<option>${p}</option>`).join('')
    const resume = this.el('resume') as HTMLSelectElement
    resume.innerHTML =
      '<option value="">resume session…</option>' +
      sessions.map((s) => `<option value="${s.session}">${s.session} (t=${s.t})</option>`).join('')
  }

  render(view: SessionView) {
    const card = this.el('card')
    card.hidden = view.pending === null
    if (view.pending) {
      const payload = this.el('payload')
      if (isImageRef(view.pending.payloadRef)) {
        payload.innerHTML = `<img src="${view.pending.payloadRef}" alt="unit ${view.pending.unitId}" />`
      } else {
        payload.innerHTML = `<div class="text-card"><code>${view.pending.unitId}</code><p>${view.pending.payloadRef}</p></div>`
      }
      ;(this.el('label-input') as HTMLInputElement).disabled = view.busy
    }
    this.el('input-error').textContent = view.inputError ?? ''
    this.el('notice').textContent =
      view.notice ?? (view.status === 'exhausted' ? 'pool exhausted; the total is exact' : '')

    const summary = this.el('summary')
    const last = view.points[view.points.length - 1]
    if (last) {
      const r = readout(last)
      summary.innerHTML = `after ${last.t} labels: <strong>${r.estimate}</strong> with ${r.level} interval ${r.interval}`
    } else {
      summary.textContent = 'no labels yet'
    }

    const svg = this.el('chart')
    const geo = chart(view.points, CHART_SIZE, this.targetRadius)
    if (geo.placeholder) {
      svg.innerHTML = `<text x="50%" y="50%" text-anchor="middle" class="placeholder">label a unit to start the trajectory</text>`
    } else {
      svg.innerHTML = `
        <path class="band" d="${geo.band}"></path>
        <path class="line" d="${geo.line}" fill="none"></path>
        ${geo.xTicks.map((tt) => `<text class="tick" x="${tt.x}" y="${CHART_SIZE.height - 6}" text-anchor="middle">${tt.t}</text>`).join('')}
      `
    }
    const exportLink = this.el('export') as HTMLAnchorElement
    const url = this.controller.exportUrl()
    exportLink.hidden = url === null
    if (url) exportLink.href = url
  }
}
