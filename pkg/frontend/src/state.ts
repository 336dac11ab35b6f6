/** Viewer state and clamping against the model's calibrated hull. */

export interface ServerInfo {
  width: number;
  height: number;
  n: number;
  d: number[];
  hull: { u: [number, number]; v: [number, number] } | null;
  apertures: string[];
}

export interface ViewerState {
  u: number;
  v: number;
  s: number;
  f: number;
  aperture: string;
  /** hull multiplier; 1 = stay inside the calibrated view positions */
  extrapolation: number;
}

export const F_MAX = 4.0;
const FOCUS_MARGIN = 0.25;

export function initialState(info: ServerInfo): ViewerState {
  return {
    u: 0,
    v: 0,
    s: 0,
    f: 0,
    aperture: info.apertures.includes("disk") ? "disk" : info.apertures[0],
    extrapolation: 1,
  };
}

function clamp(x: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, x));
}

export function focusRange(info: ServerInfo): [number, number] {
  const dmin = Math.min(...info.d);
  const dmax = Math.max(...info.d);
  const margin = FOCUS_MARGIN * Math.max(dmax - dmin, 1e-6);
  return [dmin - margin, dmax + margin];
}

/** Clamp a proposed state to the legal region the server can render well. */
export function clampState(state: ViewerState, info: ServerInfo): ViewerState {
  const ex = clamp(state.extrapolation, 1, 4);
  let u = state.u;
  let v = state.v;
  if (info.hull) {
    u = clamp(u, ex * info.hull.u[0], ex * info.hull.u[1]);
    v = clamp(v, ex * info.hull.v[0], ex * info.hull.v[1]);
  }
  const [smin, smax] = focusRange(info);
  return {
    ...state,
    u,
    v,
    s: clamp(state.s, smin, smax),
    f: clamp(state.f, 0, F_MAX),
    extrapolation: ex,
  };
}

export function renderQuery(state: ViewerState): string {
  const p = new URLSearchParams({
    u: state.u.toFixed(4),
    v: state.v.toFixed(4),
    s: state.s.toFixed(4),
    f: state.f.toFixed(4),
    aperture: state.aperture,
  });
  return p.toString();
}
