/**
 * Session state machine for the annotator.
 *
 * Exactly one status at a time: "updating" while a request is in flight,
 * "awaiting_label" when the suggestion marker invites the next click, and
 * "stopped" once the engine (or the human) ends the session. Labels can
 * only be submitted in awaiting_label, which doubles as the double-submit
 * guard; every placed glyph corresponds to one server-acknowledged
 * trajectory record.
 */

import {
  ApiError,
  CreateSessionRequest,
  SessionApi,
  Suggestion,
} from "./types.js";

export type Status =
  | { kind: "idle" }
  | { kind: "updating" }
  | { kind: "awaiting_label" }
  | { kind: "stopped"; reason: string };

export interface PromptGlyph {
  t: number;
  row: number;
  col: number;
  label: 0 | 1;
}

export interface OverlayFlags {
  mask: boolean;
  heatmap: boolean;
  maskAlpha: number;
  heatmapAlpha: number;
}

export interface ViewState {
  sessionId: string | null;
  status: Status;
  suggestion: Suggestion | null;
  glyphs: PromptGlyph[];
  iouTimeline: number[];
  hasGt: boolean;
  height: number;
  width: number;
  overlays: OverlayFlags;
  maskDigest: string | null;
  heatmapVersion: number;
  toast: string | null;
  stopBanner: string | null;
}

export function initialViewState(): ViewState {
  return {
    sessionId: null,
    status: { kind: "idle" },
    suggestion: null,
    glyphs: [],
    iouTimeline: [],
    hasGt: false,
    height: 0,
    width: 0,
    overlays: { mask: true, heatmap: true, maskAlpha: 0.45, heatmapAlpha: 0.5 },
    maskDigest: null,
    heatmapVersion: 0,
    toast: null,
    stopBanner: null,
  };
}

export type Listener = (state: ViewState) => void;

export class SessionMachine {
  private state: ViewState = initialViewState();
  private listeners: Listener[] = [];

  constructor(private readonly api: SessionApi) {}

  get view(): ViewState {
    return this.state;
  }

  subscribe(fn: Listener): void {
    this.listeners.push(fn);
  }

  private emit(next: Partial<ViewState>): void {
    this.state = { ...this.state, ...next };
    for (const fn of this.listeners) fn(this.state);
  }

  /** Create the session and render the first suggestion. */
  async start(req: CreateSessionRequest): Promise<void> {
    this.emit({ ...initialViewState(), status: { kind: "updating" } });
    const created = await this.api.createSession(req);
    const base: Partial<ViewState> = {
      sessionId: created.session_id,
      hasGt: created.has_gt,
      height: created.height,
      width: created.width,
      maskDigest: created.initial_mask_digest,
    };
    if (created.stop_reason !== null) {
      this.emit({
        ...base,
        status: { kind: "stopped", reason: created.stop_reason },
        stopBanner: bannerFor(created.stop_reason),
      });
      return;
    }
    this.emit(base);
    this.renderSuggestion(created.suggestion);
  }

  /** Place the marker for a fresh suggestion; updating -> awaiting_label. */
  renderSuggestion(suggestion: Suggestion | null): void {
    if (this.state.status.kind !== "updating") {
      throw new Error("renderSuggestion requires status=updating");
    }
    if (suggestion === null) {
      this.emit({
        status: { kind: "stopped", reason: "candidates_exhausted" },
        suggestion: null,
        stopBanner: bannerFor("candidates_exhausted"),
      });
      return;
    }
    this.emit({
      status: { kind: "awaiting_label" },
      suggestion,
      heatmapVersion: this.state.heatmapVersion + 1,
      toast: null,
    });
  }

  /** Label an arbitrary in-bounds location (free click). */
  async submitLabel(location: [number, number], label: 0 | 1): Promise<boolean> {
    if (this.state.status.kind !== "awaiting_label") {
      return false; // double-submit guard: silently ignored while updating
    }
    if (this.state.sessionId === null) return false;
    this.emit({ status: { kind: "updating" }, suggestion: null });
    try {
      const resp = await this.api.postLabel(this.state.sessionId, location, label);
      const glyph: PromptGlyph = {
        t: resp.t,
        row: location[0],
        col: location[1],
        label: resp.label,
      };
      this.emit({
        glyphs: [...this.state.glyphs, glyph],
        maskDigest: resp.mask_digest,
        iouTimeline:
          resp.iou !== null
            ? [...this.state.iouTimeline, resp.iou]
            : this.state.iouTimeline,
      });
      if (resp.stop_reason !== null) {
        this.emit({
          status: { kind: "stopped", reason: resp.stop_reason },
          stopBanner: bannerFor(resp.stop_reason),
          suggestion: null,
        });
      } else {
        this.renderSuggestion(resp.next_suggestion);
      }
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        // duplicate or out-of-bounds click: inline toast, state unchanged
        this.emit({ status: { kind: "awaiting_label" }, toast: err.message });
        return false;
      }
      if (err instanceof ApiError && err.status === 409) {
        this.emit({
          status: { kind: "stopped", reason: err.errorCode },
          stopBanner: bannerFor(err.errorCode),
        });
        return false;
      }
      throw err;
    }
  }

  /** Label the currently suggested point (Enter / Shift+Enter). */
  async labelSuggested(label: 0 | 1): Promise<boolean> {
    const s = this.state.suggestion;
    if (s === null) return false;
    return this.submitLabel(s.q, label);
  }

  /** Flip an overlay; pure view concern, never touches the network. */
  toggleOverlay(layer: "mask" | "heatmap"): void {
    const overlays = { ...this.state.overlays };
    if (layer === "mask") overlays.mask = !overlays.mask;
    else overlays.heatmap = !overlays.heatmap;
    this.emit({ overlays });
  }

  /** Annotator pressed stop. */
  async stop(): Promise<void> {
    if (this.state.sessionId === null || this.state.status.kind === "stopped") {
      return;
    }
    const resp = await this.api.stopSession(this.state.sessionId);
    this.emit({
      status: { kind: "stopped", reason: resp.stop_reason },
      stopBanner: bannerFor(resp.stop_reason),
      suggestion: null,
    });
  }
}

export function bannerFor(reason: string): string {
  const text: Record<string, string> = {
    budget_exhausted: "budget exhausted",
    max_mi_below_threshold: "model converged (information gain below threshold)",
    global_entropy_below_threshold: "model converged (entropy below threshold)",
    annotator_ended: "session ended by annotator",
    candidates_exhausted: "no locations left to query",
  };
  return text[reason] ?? reason;
}
