/** Deformed-path display: endpoint pinning check against the reference
 * waypoints and a 2-D projection chosen from the spread of the data. */

export interface PathSample {
  s: number;
  xyz: [number, number, number];
}

export interface BumpInfo {
  s_start: number;
  horizon: number;
  vector: [number, number, number];
}

function sameVec(a: readonly number[], b: readonly number[]): boolean {
  return (
    a.length === 3 && b.length === 3 && a.every((v, i) => v === b[i])
  );
}

/** Deformation must leave both path ends exactly on the reference. */
export function endpointsCoincide(
  path: readonly PathSample[],
  refStart: readonly number[],
  refEnd: readonly number[],
): boolean {
  const first = path[0];
  const last = path[path.length - 1];
  if (first === undefined || last === undefined) return false;
  return sameVec(first.xyz, refStart) && sameVec(last.xyz, refEnd);
}

export interface Projection {
  /** Coordinate indexes drawn on the horizontal / vertical axis. */
  axes: [number, number];
  xs: number[];
  ys: number[];
}

/** Map 3-D points into a width x height box using the two coordinates
 * with the largest spread, equal aspect, vertical axis flipped for
 * screen coordinates. */
export function projectToBox(
  points: readonly (readonly [number, number, number])[],
  width: number,
  height: number,
  pad = 10,
): Projection {
  const ranges: [number, number][] = [0, 1, 2].map((axis) => {
    let lo = Infinity;
    let hi = -Infinity;
    for (const p of points) {
      lo = Math.min(lo, p[axis]!);
      hi = Math.max(hi, p[axis]!);
    }
    return [lo, hi];
  });
  const order = [0, 1, 2].sort((a, b) => {
    const spread = (i: number) => ranges[i]![1] - ranges[i]![0];
    return spread(b) - spread(a) || a - b;
  });
  const [ax, ay] = [Math.min(order[0]!, order[1]!), Math.max(order[0]!, order[1]!)];
  const spanOf = (i: number) => Math.max(ranges[i]![1] - ranges[i]![0], 1e-9);
  const scale = Math.min(
    (width - 2 * pad) / spanOf(ax),
    (height - 2 * pad) / spanOf(ay),
  );
  const cx = (ranges[ax]![0] + ranges[ax]![1]) / 2;
  const cy = (ranges[ay]![0] + ranges[ay]![1]) / 2;
  const xs: number[] = [];
  const ys: number[] = [];
  for (const p of points) {
    xs.push(width / 2 + (p[ax]! - cx) * scale);
    ys.push(height / 2 - (p[ay]! - cy) * scale);
  }
  return { axes: [ax, ay], xs, ys };
}

const AXIS_NAMES = ["x", "y", "z"] as const;

export function drawPath(
  canvas: HTMLCanvasElement,
  path: readonly PathSample[],
  bumps: readonly BumpInfo[],
): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null || path.length < 2) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const proj = projectToBox(path.map((p) => p.xyz), width, height);

  const inBump = (s: number) =>
    bumps.some((b) => s >= b.s_start && s <= b.s_start + b.horizon);

  ctx.strokeStyle = "#888";
  ctx.beginPath();
  path.forEach((p, i) => {
    if (i === 0) ctx.moveTo(proj.xs[i]!, proj.ys[i]!);
    else ctx.lineTo(proj.xs[i]!, proj.ys[i]!);
  });
  ctx.stroke();

  // deformed spans re-drawn on top, heavier
  ctx.strokeStyle = "#d65633";
  ctx.lineWidth = 2.5;
  ctx.beginPath();
  let pen = false;
  path.forEach((p, i) => {
    if (inBump(p.s)) {
      if (!pen) ctx.moveTo(proj.xs[i]!, proj.ys[i]!);
      else ctx.lineTo(proj.xs[i]!, proj.ys[i]!);
      pen = true;
    } else {
      pen = false;
    }
  });
  ctx.stroke();
  ctx.lineWidth = 1;

  for (const i of [0, path.length - 1]) {
    ctx.fillStyle = "#2c7fb8";
    ctx.beginPath();
    ctx.arc(proj.xs[i]!, proj.ys[i]!, 4, 0, 2 * Math.PI);
    ctx.fill();
  }

  ctx.fillStyle = "#667";
  ctx.font = "10px sans-serif";
  ctx.fillText(
    `${AXIS_NAMES[proj.axes[0]]} / ${AXIS_NAMES[proj.axes[1]]}`,
    6,
    12,
  );
}
