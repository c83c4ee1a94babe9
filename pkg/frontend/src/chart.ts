/**
 * Geometry for the estimate trajectory chart: an estimate polyline inside a
 * confidence band, plus an optional target-radius guide. Pure functions over
 * report fields; the band edges are the service's ci_lo / ci_hi verbatim.
 */

import { Report } from './api.js'

export interface ChartSize {
  width: number
  height: number
  pad: number
}

export interface ChartGeometry {
  placeholder: boolean
  line: string
  band: string
  xTicks: { x: number; t: number }[]
  yRange: [number, number]
  lastRadius: number | null
  targetFraction: number | null
}

export function bandWidth(point: Report): number {
  return point.ci_hi - point.ci_lo
}

export function chart(points: Report[], size: ChartSize, targetRadius: number | null = null): ChartGeometry {
  if (points.length === 0) {
    return {
      placeholder: true,
      line: '',
      band: '',
      xTicks: [],
      yRange: [0, 1],
      lastRadius: null,
      targetFraction: null,
    }
  }
  const lo = Math.min(...points.map((p) => p.ci_lo))
  const hi = Math.max(...points.map((p) => p.ci_hi))
  const span = hi - lo || 1
  const innerW = size.width - 2 * size.pad
  const innerH = size.height - 2 * size.pad
  const tMax = points[points.length - 1].t
  const x = (t: number) => size.pad + (tMax === 1 ? innerW / 2 : ((t - 1) / (tMax - 1)) * innerW)
  const y = (v: number) => size.pad + (1 - (v - lo) / span) * innerH

  const line = points.map((p, i) => `${i === 0 ? 'M' : 'L'}${x(p.t)},${y(p.estimate)}`).join(' ')
  const upper = points.map((p, i) => `${i === 0 ? 'M' : 'L'}${x(p.t)},${y(p.ci_hi)}`).join(' ')
  const lower = [...points]
    .reverse()
    .map((p) => `L${x(p.t)},${y(p.ci_lo)}`)
    .join(' ')
  const band = `${upper} ${lower} Z`

  const step = Math.max(1, Math.ceil(tMax / 8))
  const xTicks = points
    .filter((p) => p.t === 1 || p.t === tMax || p.t % step === 0)
    .map((p) => ({ x: x(p.t), t: p.t }))

  const last = points[points.length - 1]
  const lastRadius = bandWidth(last) / 2
  return {
    placeholder: false,
    line,
    band,
    xTicks,
    yRange: [lo, hi],
    lastRadius,
    targetFraction:
      targetRadius === null || targetRadius <= 0
        ? null
        : Math.min(1, targetRadius / (lastRadius || targetRadius)),
  }
}
