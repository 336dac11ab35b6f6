import { hudText } from "./hud.js";
import { FrameRequester, httpTransport } from "./requester.js";
import {
  F_MAX,
  ServerInfo,
  ViewerState,
  clampState,
  focusRange,
  initialState,
  renderQuery,
} from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

async function boot(): Promise<void> {
  const base = "";
  const infoResp = await fetch(`${base}/api/info`);
  if (!infoResp.ok) throw new Error(`info request failed (${infoResp.status})`);
  const info = (await infoResp.json()) as ServerInfo;

  let state: ViewerState = initialState(info);
  let lastRenderMs: number | null = null;
  let frameUrl: string | null = null;

  const img = el<HTMLImageElement>("frame");
  const hud = el<HTMLDivElement>("hud");
  const banner = el<HTMLDivElement>("banner");
  const pad = el<HTMLDivElement>("pad");
  const dot = el<HTMLDivElement>("pad-dot");

  const sliderS = el<HTMLInputElement>("slider-s");
  const sliderF = el<HTMLInputElement>("slider-f");
  const sliderX = el<HTMLInputElement>("slider-x");
  const apSelect = el<HTMLSelectElement>("aperture");

  const [smin, smax] = focusRange(info);
  sliderS.min = smin.toFixed(3);
  sliderS.max = smax.toFixed(3);
  sliderS.step = "0.01";
  sliderF.min = "0";
  sliderF.max = String(F_MAX);
  sliderF.step = "0.01";
  sliderX.min = "1";
  sliderX.max = "4";
  sliderX.step = "0.1";
  for (const name of info.apertures) {
    const opt = document.createElement("option");
    opt.value = name;
    opt.textContent = name;
    apSelect.appendChild(opt);
  }
  apSelect.value = state.aperture;

  const requester = new FrameRequester(
    httpTransport(base),
    (ev) => {
      banner.hidden = true;
      lastRenderMs = ev.renderMs;
      const blob = new Blob([ev.bytes], { type: "image/png" });
      const url = URL.createObjectURL(blob);
      img.src = url;
      if (frameUrl) URL.revokeObjectURL(frameUrl);
      frameUrl = url;
      img.dataset.seq = String(ev.seq);
      hud.textContent = hudText(state, lastRenderMs);
    },
    (message) => {
      banner.textContent = `render service unreachable: ${message}`;
      banner.hidden = false;
    },
  );

  function apply(change: Partial<ViewerState>): void {
    state = clampState({ ...state, ...change }, info);
    dotToState();
    hud.textContent = hudText(state, lastRenderMs);
    requester.request(renderQuery(state));
  }

  function dotToState(): void {
    const hull = info.hull ?? { u: [-1, 1] as [number, number], v: [-1, 1] as [number, number] };
    const ex = state.extrapolation;
    const nx = (state.u - ex * hull.u[0]) / (ex * (hull.u[1] - hull.u[0]) || 1);
    const ny = (state.v - ex * hull.v[0]) / (ex * (hull.v[1] - hull.v[0]) || 1);
    dot.style.left = `${(nx * 100).toFixed(1)}%`;
    dot.style.top = `${(ny * 100).toFixed(1)}%`;
  }

  function padEvent(ev: PointerEvent): void {
    const rect = pad.getBoundingClientRect();
    const nx = (ev.clientX - rect.left) / rect.width;
    const ny = (ev.clientY - rect.top) / rect.height;
    const hull = info.hull ?? { u: [-1, 1] as [number, number], v: [-1, 1] as [number, number] };
    const ex = state.extrapolation;
    apply({
      u: ex * (hull.u[0] + nx * (hull.u[1] - hull.u[0])),
      v: ex * (hull.v[0] + ny * (hull.v[1] - hull.v[0])),
    });
  }

  let dragging = false;
  pad.addEventListener("pointerdown", (ev) => {
    dragging = true;
    pad.setPointerCapture(ev.pointerId);
    padEvent(ev);
  });
  pad.addEventListener("pointermove", (ev) => {
    if (dragging) padEvent(ev);
  });
  pad.addEventListener("pointerup", () => {
    dragging = false;
  });

  sliderS.addEventListener("input", () => apply({ s: parseFloat(sliderS.value) }));
  sliderF.addEventListener("input", () => apply({ f: parseFloat(sliderF.value) }));
  sliderX.addEventListener("input", () => apply({ extrapolation: parseFloat(sliderX.value) }));
  apSelect.addEventListener("change", () => apply({ aperture: apSelect.value }));

  apply({});
}

boot().catch((err) => {
  const banner = document.getElementById("banner");
  if (banner) {
    banner.textContent = String(err);
    banner.hidden = false;
  }
});
