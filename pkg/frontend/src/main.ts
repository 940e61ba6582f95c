/** Browser entry point: wires the controller to a minimal DOM. */

import { ApiClient } from "./client.js";
import { maskToRgba } from "./colormap.js";
import { ExplorerController, StripResult, View } from "./controller.js";
import { SessionState, preservationLabel, snapshotCaption } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function drawMaskOverlay(canvas: HTMLCanvasElement, maskUrl: string): Promise<void> {
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error("bad mask image"));
    img.src = maskUrl;
  });
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, img.width, img.height);
  const gray = new Uint8ClampedArray(img.width * img.height);
  for (let i = 0; i < gray.length; i++) gray[i] = data.data[i * 4] ?? 0;
  const out = ctx.createImageData(img.width, img.height);
  out.data.set(maskToRgba(gray));
  ctx.putImageData(out, 0, 0);
}

async function boot(): Promise<void> {
  const client = new ApiClient("");
  const info = await client.modelInfo();

  const result = el<HTMLImageElement>("result");
  const overlay = el<HTMLCanvasElement>("mask-overlay");
  const notice = el<HTMLDivElement>("notice");
  const snapshots = el<HTMLDivElement>("snapshots");
  const strip = el<HTMLDivElement>("strip");

  const view: View = {
    renderResult(imageUrl, maskUrl) {
      result.src = imageUrl;
      overlay.hidden = maskUrl === null;
      if (maskUrl !== null) void drawMaskOverlay(overlay, maskUrl);
    },
    renderSnapshots(state: SessionState) {
      snapshots.replaceChildren(
        ...state.snapshots.map((s) => {
          const fig = document.createElement("figure");
          const img = document.createElement("img");
          img.src = `data:image/png;base64,${s.imageB64}`;
          const cap = document.createElement("figcaption");
          cap.textContent = snapshotCaption(s);
          fig.append(img, cap);
          return fig;
        }),
      );
    },
    renderStrip(res: StripResult) {
      const header = document.createElement("div");
      header.className = "strip-header";
      header.textContent = `σm ${res.sigmaM} · σg ${res.sigmaG}`;
      const row = document.createElement("div");
      row.className = "strip-row";
      for (const cell of res.cells) {
        const box = document.createElement("figure");
        if (cell.ok) {
          const img = document.createElement("img");
          img.src = `data:image/png;base64,${cell.imageB64}`;
          box.append(img);
        } else {
          const err = document.createElement("div");
          err.className = "cell-error";
          err.textContent = `failed: ${cell.error}`;
          box.append(err);
        }
        const cap = document.createElement("figcaption");
        cap.textContent = `age ${cell.age}`;
        box.append(cap);
        row.append(box);
      }
      strip.replaceChildren(header, row);
    },
    showValidation(message) {
      notice.textContent = message;
      notice.className = "validation";
    },
    showRetryBanner(message) {
      notice.textContent = message;
      notice.className = "retry";
    },
    clearNotices() {
      notice.textContent = "";
      notice.className = "";
    },
  };

  const ctl = new ExplorerController(info, client, view);

  const age = el<HTMLInputElement>("age");
  const sigmaM = el<HTMLInputElement>("sigma-m");
  const sigmaG = el<HTMLInputElement>("sigma-g");
  const label = el<HTMLSpanElement>("preservation-label");

  age.min = String(info.age_range[0]);
  age.max = String(info.age_range[1]);
  age.value = String(ctl.state.targetAge);
  for (const s of [sigmaM, sigmaG]) {
    s.min = "0";
    s.max = String(info.sigma_max);
    s.step = "0.1";
    s.value = "0";
  }

  const refreshLabel = () => {
    label.textContent = preservationLabel(ctl.state.sigmaM, ctl.state.sigmaG, info.sigma_max);
  };
  refreshLabel();

  age.addEventListener("input", () => ctl.handle({ type: "set_age", value: Number(age.value) }));
  sigmaM.addEventListener("input", () => {
    ctl.handle({ type: "set_sigma_m", value: Number(sigmaM.value) });
    refreshLabel();
  });
  sigmaG.addEventListener("input", () => {
    ctl.handle({ type: "set_sigma_g", value: Number(sigmaG.value) });
    refreshLabel();
  });
  for (const s of [age, sigmaM, sigmaG]) {
    s.addEventListener("change", () => ctl.handle({ type: "slider_release" }));
  }

  el<HTMLInputElement>("file").addEventListener("change", (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const reader = new FileReader();
    reader.onload = () => {
      const url = String(reader.result);
      ctl.handle({ type: "set_image", imageB64: url.split(",")[1] ?? "" });
      el<HTMLImageElement>("source").src = url;
      ctl.handle({ type: "slider_release" });
    };
    reader.readAsDataURL(file);
  });

  el<HTMLButtonElement>("toggle-mask").addEventListener("click", () => {
    ctl.handle({ type: "toggle_mask" });
    ctl.handle({ type: "slider_release" });
  });
  el<HTMLButtonElement>("pin").addEventListener("click", () => ctl.handle({ type: "pin_snapshot" }));
  el<HTMLButtonElement>("run-strip").addEventListener("click", () =>
    ctl.handle({ type: "request_strip" }),
  );
}

void boot();
