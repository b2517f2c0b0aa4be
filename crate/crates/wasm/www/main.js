import init, { landscape, Diffusion, coupling_matrix } from "./pkg/difformer_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showError(e) {
  $("error").textContent = e ? String(e.message ?? e) : "";
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

// Draws each series scaled to its own [min, max] so curves of different size share a panel.
function plotSeries(canvas, xs, series, { top = 0, height = canvas.height, title = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const pad = 28;
  const w = canvas.width;
  ctx.save();
  ctx.translate(0, top);
  axes(ctx, w, height, pad);
  ctx.fillStyle = "#222";
  ctx.fillText(title, pad + 4, pad - 10);
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  series.forEach(({ ys, color, label }, i) => {
    const finite = ys.filter(Number.isFinite);
    const y0 = Math.min(...finite), y1 = Math.max(...finite);
    const sx = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
    const sy = (y) => height - pad - ((y - y0) / (y1 - y0 || 1)) * (height - 2 * pad);
    ctx.strokeStyle = color;
    ctx.beginPath();
    ys.forEach((y, k) => (k ? ctx.lineTo(sx(xs[k]), sy(y)) : ctx.moveTo(sx(xs[k]), sy(y))));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(`${label} [${y0.toPrecision(3)}, ${y1.toPrecision(3)}]`, w - 190, pad + 14 * i);
  });
  ctx.restore();
}

function drawLandscape() {
  try {
    const rows = landscape($("family").value, 0.01);
    const z = [], f = [], d = [];
    for (let i = 0; i < rows.length; i += 3) {
      z.push(rows[i]);
      f.push(rows[i + 1]);
      d.push(rows[i + 2]);
    }
    const canvas = $("landscape");
    canvas.getContext("2d").clearRect(0, 0, canvas.width, canvas.height);
    plotSeries(canvas, z, [
      { ys: f, color: "#1f77b4", label: "f" },
      { ys: d, color: "#d62728", label: "delta" },
    ], { title: "squared distance 0..4" });
    showError(null);
  } catch (e) {
    showError(e);
  }
}

let run = null;
let edges = [];

function settings() {
  return [$("coupling").value, num("nodes"), num("edgep"), num("tau"), num("steps"), num("beta"), num("seed")];
}

function drawPoints(k) {
  const canvas = $("points");
  const ctx = canvas.getContext("2d");
  const pts = run.points(k);
  let r = 1e-9;
  for (const v of run.points(0)) r = Math.max(r, Math.abs(v));
  const s = (canvas.width / 2 - 12) / r;
  const px = (i) => canvas.width / 2 + pts[2 * i] * s;
  const py = (i) => canvas.height / 2 - pts[2 * i + 1] * s;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "rgba(0,0,0,0.15)";
  ctx.beginPath();
  for (let e = 0; e < edges.length; e += 2) {
    ctx.moveTo(px(edges[e]), py(edges[e]));
    ctx.lineTo(px(edges[e + 1]), py(edges[e + 1]));
  }
  ctx.stroke();
  ctx.fillStyle = "#1f77b4";
  for (let i = 0; i < pts.length / 2; i++) {
    ctx.beginPath();
    ctx.arc(px(i), py(i), 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  const energy = run.energies()[k], div = run.diversities()[k];
  $("frame-info").textContent = `step ${k}: energy ${energy.toExponential(3)}, diversity ${div.toExponential(3)}`;
}

function drawCurves() {
  const canvas = $("curves");
  canvas.getContext("2d").clearRect(0, 0, canvas.width, canvas.height);
  const e = Array.from(run.energies());
  const d = Array.from(run.diversities());
  const steps = e.map((_, k) => k);
  const half = canvas.height / 2;
  plotSeries(canvas, steps, [{ ys: e, color: "#2ca02c", label: "energy" }], { height: half, title: "energy per step" });
  plotSeries(canvas, steps, [{ ys: d.map((v) => Math.log10(Math.max(v, 1e-300))), color: "#9467bd", label: "log10 diversity" }], {
    top: half,
    height: half,
    title: "diversity",
  });
}

function drawHeatmap() {
  const [coupling, nodes, edgep, , , , seed] = settings();
  const s = coupling_matrix(coupling, nodes, edgep, seed);
  const canvas = $("heatmap");
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / nodes;
  let max = 0;
  for (const v of s) max = Math.max(max, v);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < nodes; i++) {
    for (let j = 0; j < nodes; j++) {
      const t = max > 0 ? s[i * nodes + j] / max : 0;
      ctx.fillStyle = `rgb(${255 - 200 * t}, ${255 - 150 * t}, 255)`;
      ctx.fillRect(j * cell, i * cell, Math.ceil(cell), Math.ceil(cell));
    }
  }
}

function runDiffusion() {
  try {
    run?.free();
    run = new Diffusion(...settings());
    edges = Array.from(run.edges());
    $("frame").max = String(run.frames() - 1);
    $("frame").value = "0";
    drawPoints(0);
    drawCurves();
    drawHeatmap();
    showError(null);
  } catch (e) {
    run = null;
    showError(e);
  }
}

await init();
$("family").addEventListener("change", drawLandscape);
$("run").addEventListener("click", runDiffusion);
$("frame").addEventListener("input", () => run && drawPoints(num("frame")));
drawLandscape();
runDiffusion();
