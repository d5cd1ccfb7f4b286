/** Residual strip chart: a sliding time window of (t, eta_bar, contact)
 * plus the canvas renderer. Buffer logic is pure and tested; drawing is
 * thin. */

export interface StripSample {
  t: number;
  etaBar: number;
  contact: boolean;
}

export class StripBuffer {
  readonly windowS: number;
  private samples: StripSample[] = [];

  constructor(windowS = 10) {
    this.windowS = windowS;
  }

  /** Samples arrive in time order; a backwards jump means the run was
   * reset, so the history no longer belongs on the chart. */
  push(sample: StripSample): void {
    const last = this.samples[this.samples.length - 1];
    if (last !== undefined && sample.t < last.t) {
      this.samples = [];
    }
    this.samples.push(sample);
    const cutoff = sample.t - this.windowS;
    let drop = 0;
    while (drop < this.samples.length && this.samples[drop]!.t < cutoff) {
      drop += 1;
    }
    if (drop > 0) this.samples = this.samples.slice(drop);
  }

  get points(): readonly StripSample[] {
    return this.samples;
  }

  /** Visible time span [start, end]; end tracks the newest sample. */
  span(): [number, number] {
    if (this.samples.length === 0) return [0, this.windowS];
    const end = this.samples[this.samples.length - 1]!.t;
    return [Math.max(0, end - this.windowS), Math.max(end, this.windowS)];
  }

  peak(): number {
    let peak = 0;
    for (const s of this.samples) peak = Math.max(peak, s.etaBar);
    return peak;
  }

  clear(): void {
    this.samples = [];
  }
}

export function drawStrip(
  canvas: HTMLCanvasElement,
  buffer: StripBuffer,
  threshold: number,
): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const [t0, t1] = buffer.span();
  const yMax = Math.max(buffer.peak() * 1.1, threshold * 1.5, 0.1);
  const x = (t: number) => ((t - t0) / (t1 - t0)) * width;
  const y = (v: number) => height - (v / yMax) * (height - 4) - 2;

  // contact intervals shaded behind everything else
  ctx.fillStyle = "rgba(214, 86, 51, 0.15)";
  let shadeStart: number | null = null;
  for (const s of buffer.points) {
    if (s.contact && shadeStart === null) shadeStart = s.t;
    if (!s.contact && shadeStart !== null) {
      ctx.fillRect(x(shadeStart), 0, x(s.t) - x(shadeStart), height);
      shadeStart = null;
    }
  }
  if (shadeStart !== null) {
    ctx.fillRect(x(shadeStart), 0, width - x(shadeStart), height);
  }

  ctx.strokeStyle = "#b8860b";
  ctx.setLineDash([5, 4]);
  ctx.beginPath();
  ctx.moveTo(0, y(threshold));
  ctx.lineTo(width, y(threshold));
  ctx.stroke();
  ctx.setLineDash([]);

  ctx.strokeStyle = "#2c7fb8";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  buffer.points.forEach((s, i) => {
    if (i === 0) ctx.moveTo(x(s.t), y(s.etaBar));
    else ctx.lineTo(x(s.t), y(s.etaBar));
  });
  ctx.stroke();
  ctx.lineWidth = 1;

  ctx.fillStyle = "#667";
  ctx.font = "10px sans-serif";
  ctx.fillText(yMax.toFixed(2), 4, 12);
  ctx.fillText(`${t0.toFixed(1)} s`, 4, height - 4);
  ctx.fillText(`${t1.toFixed(1)} s`, width - 40, height - 4);
}
