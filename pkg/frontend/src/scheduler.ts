/** Timer indirection so tests and event-log replay drive time explicitly.
 *
 * The controller only ever holds one pending timer (the debounce), but the
 * interface is general enough for both the browser and the virtual clock.
 */

export interface Scheduler {
  now(): number;
  schedule(fn: () => void, delayMs: number): number;
  cancel(handle: number): void;
}

export class RealScheduler implements Scheduler {
  now(): number {
    return Date.now();
  }
  schedule(fn: () => void, delayMs: number): number {
    return setTimeout(fn, delayMs) as unknown as number;
  }
  cancel(handle: number): void {
    clearTimeout(handle);
  }
}

interface Pending {
  at: number;
  fn: () => void;
}

/** Deterministic clock: timers fire inside advanceTo, in deadline order. */
export class VirtualScheduler implements Scheduler {
  private t = 0;
  private pending = new Map<number, Pending>();
  private nextHandle = 1;

  now(): number {
    return this.t;
  }

  schedule(fn: () => void, delayMs: number): number {
    const handle = this.nextHandle++;
    this.pending.set(handle, { at: this.t + delayMs, fn });
    return handle;
  }

  cancel(handle: number): void {
    this.pending.delete(handle);
  }

  advanceTo(t: number): void {
    for (;;) {
      let best: [number, Pending] | null = null;
      for (const entry of this.pending) {
        if (entry[1].at <= t && (best === null || entry[1].at < best[1].at)) {
          best = entry;
        }
      }
      if (best === null) break;
      this.pending.delete(best[0]);
      this.t = best[1].at;
      best[1].fn();
    }
    this.t = Math.max(this.t, t);
  }

  /** Run out every pending timer (end-of-session flush). */
  drain(): void {
    let guard = 0;
    while (this.pending.size > 0 && guard++ < 1000) {
      const ts = [...this.pending.values()].map((p) => p.at);
      this.advanceTo(Math.max(...ts));
    }
  }
}
