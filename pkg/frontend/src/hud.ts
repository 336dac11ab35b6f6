import { ViewerState } from "./state.js";

/** One-line status readout; f=0 renders are sub-aperture (pinhole) views. */
export function hudText(state: ViewerState, renderMs: number | null): string {
  const mode = state.f === 0 ? "sub-aperture" : `aperture ${state.aperture} x${state.f.toFixed(2)}`;
  const ms = renderMs === null ? "" : `  ${renderMs.toFixed(1)} ms`;
  return (
    `u ${state.u.toFixed(3)}  v ${state.v.toFixed(3)}  ` +
    `s ${state.s.toFixed(3)}  f ${state.f.toFixed(2)}  [${mode}]${ms}`
  );
}
