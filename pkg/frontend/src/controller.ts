/**
 * Session state machine behind the console.
 *
 * Invariants: at most one mutation request in flight; label input is
 * validated locally before any request is made; every number in the view
 * state is a verbatim service-response field. The human decides when to
 * stop; nothing here halts a session.
 */

import { ApiClient, ApiError, CreateSessionRequest, Report } from './api.js'

export type Status = 'idle' | 'awaiting-label' | 'exhausted' | 'error'

export interface PendingView {
  unitId: string
  payloadRef: string
  q: number
}

export interface SessionView {
  sessionId: string | null
  status: Status
  pending: PendingView | null
  points: Report[]
  inputError: string | null
  notice: string | null
  busy: boolean
}

const emptyView = (): SessionView => ({
  sessionId: null,
  status: 'idle',
  pending: null,
  points: [],
  inputError: null,
  notice: null,
  busy: false,
})

export function validateLabel(text: string): { value?: number; error?: string } {
  const trimmed = text.trim()
  if (trimmed === '') return { error: 'enter a count' }
  const value = Number(trimmed)
  if (!Number.isFinite(value)) return { error: 'not a number' }
  if (value < 0) return { error: 'counts are nonnegative' }
  return { value }
}

export class SessionController {
  view: SessionView = emptyView()

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: (view: SessionView) => void = () => {},
  ) {}

  private emit() {
    this.onChange(this.view)
  }

  private fail(err: unknown) {
    this.view.notice = err instanceof Error ? err.message : String(err)
    this.view.status = this.view.sessionId ? this.view.status : 'error'
    this.view.busy = false
    this.emit()
  }

  async create(body: CreateSessionRequest): Promise<void> {
    if (this.view.busy) return
    this.view = emptyView()
    this.view.busy = true
    this.emit()
    try {
      const info = await this.api.createSession(body)
      this.view.sessionId = info.session
      this.view.busy = false
      await this.fetchNext()
    } catch (err) {
      this.fail(err)
    }
  }

  async resume(sessionId: string): Promise<void> {
    if (this.view.busy) return
    this.view = emptyView()
    this.view.sessionId = sessionId
    this.view.busy = true
    this.emit()
    try {
      const { points } = await this.api.trajectory(sessionId)
      this.view.points = points
      this.view.busy = false
      await this.fetchNext()
    } catch (err) {
      this.fail(err)
    }
  }

  /** Fetch (or re-fetch) the pending unit; safe to repeat, never mutates. */
  async fetchNext(): Promise<void> {
    const sid = this.view.sessionId
    if (!sid) return
    try {
      const next = await this.api.nextSample(sid)
      if (next.status === 'exhausted') {
        this.view.pending = null
        this.view.status = 'exhausted'
      } else {
        this.view.pending = {
          unitId: next.unit_id,
          payloadRef: next.payload_ref,
          q: next.q,
        }
        this.view.status = 'awaiting-label'
      }
      this.view.inputError = null
      this.emit()
    } catch (err) {
      this.fail(err)
    }
  }

  /**
   * Validate and submit one label. Returns true when a step was committed.
   * Invalid input never leaves the client; a stale pending sample triggers
   * one automatic re-fetch.
   */
  async submit(text: string): Promise<boolean> {
    const sid = this.view.sessionId
    if (!sid || this.view.busy || !this.view.pending) return false
    const { value, error } = validateLabel(text)
    if (error !== undefined) {
      this.view.inputError = error
      this.emit()
      return false
    }
    this.view.busy = true
    this.view.inputError = null
    this.emit()
    try {
      const report = await this.api.submitLabel(sid, this.view.pending.unitId, value!)
      this.view.points = [...this.view.points, report]
      this.view.pending = null
      this.view.notice = null
      this.view.busy = false
      await this.fetchNext()
      return true
    } catch (err) {
      this.view.busy = false
      if (err instanceof ApiError && err.status === 409) {
        this.view.notice = 'sample was stale; refreshed'
        await this.fetchNext()
        return false
      }
      this.fail(err)
      return false
    }
  }

  exportUrl(): string | null {
    return this.view.sessionId ? this.api.exportUrl(this.view.sessionId) : null
  }
}
