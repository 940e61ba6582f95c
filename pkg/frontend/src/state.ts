/** Session state and the event log it is rebuilt from.
 *
 * Every user interaction is an event; the reducer is the only writer, so
 * replaying a recorded log through a fresh controller reproduces the exact
 * request sequence (timer scheduling included, see scheduler.ts).
 */

import type { ModelInfo } from "./schema.js";

export interface Snapshot {
  targetAge: number;
  sigmaM: number;
  sigmaG: number;
  imageB64: string;
}

export interface SessionState {
  imageB64: string | null;
  targetAge: number;
  sigmaM: number;
  sigmaG: number;
  showMask: boolean;
  snapshots: Snapshot[];
  /** last successful edit result, the thing pin_snapshot captures */
  lastResultB64: string | null;
}

export type UiEvent =
  | { type: "set_image"; imageB64: string }
  | { type: "set_age"; value: number }
  | { type: "set_sigma_m"; value: number }
  | { type: "set_sigma_g"; value: number }
  | { type: "slider_release" }
  | { type: "toggle_mask" }
  | { type: "pin_snapshot" }
  | { type: "request_strip" };

/** Event plus its session-relative time in ms; timestamps are what make a
 * replay hit the same debounce windows as the live session. */
export interface LoggedEvent {
  t: number;
  ev: UiEvent;
}

export function initialState(info: ModelInfo): SessionState {
  return {
    imageB64: null,
    targetAge: Math.round((info.age_range[0] + info.age_range[1]) / 2),
    sigmaM: 0,
    sigmaG: 0,
    showMask: false,
    snapshots: [],
    lastResultB64: null,
  };
}

function clamp(v: number, lo: number, hi: number): number {
  if (!Number.isFinite(v)) return lo;
  return Math.min(hi, Math.max(lo, v));
}

/** Pure state transition. Slider values are clamped against /model/info here,
 * so nothing downstream can ever emit an out-of-range request. */
export function applyEvent(state: SessionState, ev: UiEvent, info: ModelInfo): SessionState {
  switch (ev.type) {
    case "set_image":
      return { ...state, imageB64: ev.imageB64, lastResultB64: null };
    case "set_age":
      return {
        ...state,
        targetAge: Math.round(clamp(ev.value, info.age_range[0], info.age_range[1])),
      };
    case "set_sigma_m":
      return { ...state, sigmaM: clamp(ev.value, 0, info.sigma_max) };
    case "set_sigma_g":
      return { ...state, sigmaG: clamp(ev.value, 0, info.sigma_max) };
    case "toggle_mask":
      return { ...state, showMask: !state.showMask };
    case "pin_snapshot":
      if (state.lastResultB64 === null) return state;
      return {
        ...state,
        snapshots: [
          ...state.snapshots,
          {
            targetAge: state.targetAge,
            sigmaM: state.sigmaM,
            sigmaG: state.sigmaG,
            imageB64: state.lastResultB64,
          },
        ],
      };
    case "slider_release":
    case "request_strip":
      return state; // side effects only; handled by the controller
  }
}

export function snapshotCaption(s: Snapshot): string {
  return `age ${s.targetAge} · σm ${trim(s.sigmaM)} · σg ${trim(s.sigmaG)}`;
}

function trim(v: number): string {
  return Number.isInteger(v) ? String(v) : v.toFixed(1);
}

/** Slider-corner naming: (0,0) keeps structure, (max,max) releases it. */
export function preservationLabel(sigmaM: number, sigmaG: number, sigmaMax: number): string {
  const lo = sigmaMax / 3;
  const hi = (2 * sigmaMax) / 3;
  if (sigmaM <= lo && sigmaG <= lo) return "High preservation";
  if (sigmaM >= hi && sigmaG >= hi) return "Low preservation";
  return "Custom preservation";
}
