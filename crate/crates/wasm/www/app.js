import init, { envelopeDemo, spectrogramDemo, frequencyCurve } from "./pkg/dmdc_wasm.js";

const $ = (id) => document.getElementById(id);
const params = () => ({
  seed: Number($("seed").value) >>> 0,
  noise: Math.max(0, Number($("noise").value)),
  obs: Number($("obs").value),
});

function run(fn) {
  $("status").textContent = "";
  try {
    fn();
  } catch (e) {
    $("status").textContent = String(e.message ?? e);
  }
}

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
}

function scaler(lo, hi, a, b) {
  const span = hi - lo || 1;
  return (v) => a + ((v - lo) / span) * (b - a);
}

function line(ctx, xs, ys, sx, sy, color) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
  ctx.stroke();
}

function drawEnvelope() {
  const { seed, noise, obs } = params();
  const d = JSON.parse(envelopeDemo(seed, noise, obs));
  const c = $("envelope");
  const ctx = c.getContext("2d");
  const pad = 30;
  axes(ctx, c.width, c.height, pad);
  const lo = Math.min(...d.lower, ...d.measured);
  const hi = Math.max(...d.upper, ...d.measured);
  const sx = scaler(d.time_s[0], d.time_s[d.time_s.length - 1], pad, c.width - pad);
  const sy = scaler(lo, hi, c.height - pad, pad);
  ctx.fillStyle = "rgba(70,130,180,0.2)";
  ctx.beginPath();
  d.time_s.forEach((t, i) => (i ? ctx.lineTo(sx(t), sy(d.upper[i])) : ctx.moveTo(sx(t), sy(d.upper[i]))));
  for (let i = d.time_s.length - 1; i >= 0; i--) ctx.lineTo(sx(d.time_s[i]), sy(d.lower[i]));
  ctx.fill();
  line(ctx, d.time_s, d.measured, sx, sy, "#333");
  line(ctx, d.time_s, d.predicted, sx, sy, "steelblue");
  $("envelope-stat").textContent =
    `${d.observable}: ±${d.half_width.toPrecision(3)}, coverage ${(100 * d.coverage).toFixed(1)}%, CV test R² ${d.r2_test.toFixed(4)}`;
}

function heat(canvas, grid) {
  const ctx = canvas.getContext("2d");
  const rows = grid.length;
  const cols = grid[0].length;
  const w = canvas.width / rows;
  const h = canvas.height / cols;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) {
      const v = grid[i][j];
      ctx.fillStyle = `hsl(${240 - 240 * v}, 80%, ${20 + 45 * v}%)`;
      // pulse length runs left to right, frequency bottom to top
      ctx.fillRect(i * w, canvas.height - (j + 1) * h, w + 1, h + 1);
    }
  }
}

function drawSpectrogram() {
  const { seed, noise, obs } = params();
  const d = JSON.parse(spectrogramDemo(seed, noise, obs, Number($("cap").value)));
  heat($("sg-exp"), d.experiment);
  heat($("sg-model"), d.model);
  const pl = d.pulse_length_axis;
  $("spectrogram-stat").textContent =
    `${d.observable}: pulses ${pl[0].toFixed(2)}–${pl[pl.length - 1].toFixed(2)} s, similarity ${d.similarity.toFixed(4)}`;
}

function drawFrequency() {
  const { seed, noise } = params();
  const pts = JSON.parse(frequencyCurve(seed, noise));
  const c = $("frequency");
  const ctx = c.getContext("2d");
  const pad = 30;
  axes(ctx, c.width, c.height, pad);
  const hz = pts.map((p) => Math.log10(p.hz));
  const all = pts.flatMap((p) => p.r2_test);
  const sx = scaler(Math.min(...hz), Math.max(...hz), pad, c.width - pad);
  const sy = scaler(Math.min(0, ...all), 1, c.height - pad, pad);
  const colors = ["steelblue", "firebrick", "seagreen"];
  for (let k = 0; k < 3; k++) {
    line(ctx, hz, pts.map((p) => p.r2_test[k]), sx, sy, colors[k]);
  }
  ctx.fillStyle = "#333";
  pts.forEach((p, i) => ctx.fillText(`${p.hz} Hz`, sx(hz[i]) - 12, c.height - 10));
}

await init();
$("run-envelope").onclick = () => run(drawEnvelope);
$("run-spectrogram").onclick = () => run(drawSpectrogram);
$("run-frequency").onclick = () => run(drawFrequency);
run(drawEnvelope);
