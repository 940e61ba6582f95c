/** Wiring between session state, the HTTP client, and whatever renders.
 *
 * Slider releases are debounced 250 ms and share a single in-flight edit
 * request; a newer release aborts the older call. The age progression strip
 * is its own control with the same supersede rule applied to the whole row.
 */

import { ApiClient, HttpError } from "./client.js";
import type { EditRequest, ModelInfo } from "./schema.js";
import { RealScheduler, Scheduler } from "./scheduler.js";
import {
  LoggedEvent,
  SessionState,
  UiEvent,
  applyEvent,
  initialState,
} from "./state.js";

export const DEBOUNCE_MS = 250;
export const STRIP_AGES = [25, 35, 45, 60];

export type StripCell =
  | { age: number; ok: true; imageB64: string }
  | { age: number; ok: false; error: string };

export interface StripResult {
  sigmaM: number;
  sigmaG: number;
  cells: StripCell[];
}

/** Everything the DOM layer needs to react to; tests plug in a recorder. */
export interface View {
  renderResult(imageUrl: string, maskUrl: string | null): void;
  renderSnapshots(state: SessionState): void;
  renderStrip(strip: StripResult): void;
  showValidation(message: string): void;
  showRetryBanner(message: string): void;
  clearNotices(): void;
}

export class ExplorerController {
  state: SessionState;
  private log: LoggedEvent[] = [];
  private t0: number;
  private debounceHandle: number | null = null;
  private inflight: AbortController | null = null;
  private stripInflight: AbortController | null = null;

  constructor(
    readonly info: ModelInfo,
    private readonly client: ApiClient,
    private readonly view: View,
    private readonly scheduler: Scheduler = new RealScheduler(),
  ) {
    this.state = initialState(info);
    this.t0 = scheduler.now();
  }

  eventLog(): LoggedEvent[] {
    return [...this.log];
  }

  handle(ev: UiEvent): void {
    this.log.push({ t: this.scheduler.now() - this.t0, ev });
    this.state = applyEvent(this.state, ev, this.info);
    switch (ev.type) {
      case "slider_release":
        this.scheduleEdit();
        break;
      case "request_strip":
        void this.runStrip();
        break;
      case "pin_snapshot":
        this.view.renderSnapshots(this.state);
        break;
      default:
        break;
    }
  }

  private scheduleEdit(): void {
    if (this.state.imageB64 === null) return;
    if (this.debounceHandle !== null) this.scheduler.cancel(this.debounceHandle);
    this.debounceHandle = this.scheduler.schedule(() => {
      this.debounceHandle = null;
      void this.fireEdit();
    }, DEBOUNCE_MS);
  }

  private buildRequest(targetAge: number): EditRequest {
    return {
      image: this.state.imageB64 ?? "",
      target_age: targetAge,
      sigma_m: this.state.sigmaM,
      sigma_g: this.state.sigmaG,
      return_mask: this.state.showMask,
      seed: 0,
    };
  }

  private async fireEdit(): Promise<void> {
    this.inflight?.abort();
    const ctrl = new AbortController();
    this.inflight = ctrl;
    try {
      const res = await this.client.edit(this.buildRequest(this.state.targetAge), ctrl.signal);
      if (ctrl.signal.aborted) return;
      this.state = { ...this.state, lastResultB64: res.image_b64 };
      this.view.clearNotices();
      this.view.renderResult(
        `data:image/png;base64,${res.image_b64}`,
        res.mask_b64 ? `data:image/png;base64,${res.mask_b64}` : null,
      );
    } catch (err) {
      if (ctrl.signal.aborted) return;
      if (err instanceof HttpError && err.status === 400) {
        this.view.showValidation(err.message);
      } else if (err instanceof HttpError) {
        this.view.showRetryBanner(`server error (${err.status}): ${err.message}`);
      } else {
        this.view.showRetryBanner("network error, check the server and retry");
      }
    } finally {
      if (this.inflight === ctrl) this.inflight = null;
    }
  }

  private async runStrip(): Promise<void> {
    if (this.state.imageB64 === null) return;
    this.stripInflight?.abort();
    const ctrl = new AbortController();
    this.stripInflight = ctrl;
    const [lo, hi] = this.info.age_range;
    const ages = STRIP_AGES.map((a) => Math.min(hi, Math.max(lo, a)));
    const cells = await Promise.all(
      ages.map(async (age): Promise<StripCell> => {
        try {
          const res = await this.client.edit(this.buildRequest(age), ctrl.signal);
          return { age, ok: true, imageB64: res.image_b64 };
        } catch (err) {
          const msg = err instanceof Error ? err.message : String(err);
          return { age, ok: false, error: msg };
        }
      }),
    );
    if (ctrl.signal.aborted) return;
    this.view.renderStrip({ sigmaM: this.state.sigmaM, sigmaG: this.state.sigmaG, cells });
    if (this.stripInflight === ctrl) this.stripInflight = null;
  }
}

/** Rebuild a session from its recorded log; with the same model info and a
 * mock transport this reproduces the live request sequence exactly. */
export function replayLog(
  log: LoggedEvent[],
  info: ModelInfo,
  client: ApiClient,
  view: View,
  scheduler: { advanceTo(t: number): void; drain(): void } & Scheduler,
): ExplorerController {
  const ctl = new ExplorerController(info, client, view, scheduler);
  for (const { t, ev } of log) {
    scheduler.advanceTo(t);
    ctl.handle(ev);
  }
  scheduler.drain();
  return ctl;
}
