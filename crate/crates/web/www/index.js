import init, { augment_preview, embedding_sources, graph_heatmap, segment_metrics } from "./pkg/trg_web.js";

const $ = (id) => document.getElementById(id);
const PALETTE = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#ff9da7"];

function fail(el, e) {
  el.innerHTML = `<span class="err">${e}</span>`;
}

// viridis-ish ramp, enough for a heatmap
function ramp(v) {
  const stops = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
  const x = Math.min(Math.max(v, 0), 1) * (stops.length - 1);
  const i = Math.min(Math.floor(x), stops.length - 2);
  const f = x - i;
  const c = stops[i].map((a, k) => Math.round(a + f * (stops[i + 1][k] - a)));
  return `rgb(${c})`;
}

let graph = null;

function drawGraph() {
  const tip = $("graph-tip");
  try {
    graph = JSON.parse(graph_heatmap($("graph-source").value, $("graph-metric").value, $("graph-norm").value));
  } catch (e) {
    return fail(tip, e);
  }
  const cv = $("graph");
  const ctx = cv.getContext("2d");
  const n = graph.labels.length;
  const cell = cv.width / n;
  ctx.clearRect(0, 0, cv.width, cv.height);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      ctx.fillStyle = ramp(graph.values[i][j]);
      ctx.fillRect(j * cell, i * cell, Math.ceil(cell), Math.ceil(cell));
    }
  }
  tip.textContent = `${n} x ${n}; hover a cell`;
}

$("graph").addEventListener("mousemove", (ev) => {
  if (!graph) return;
  const cv = $("graph");
  const r = cv.getBoundingClientRect();
  const n = graph.labels.length;
  const j = Math.floor(((ev.clientX - r.left) / r.width) * n);
  const i = Math.floor(((ev.clientY - r.top) / r.height) * n);
  if (i < 0 || j < 0 || i >= n || j >= n) return;
  $("graph-tip").textContent = `${graph.labels[i]}  /  ${graph.labels[j]}  =  ${graph.values[i][j].toFixed(3)}`;
});

function drawSkeleton(ctx, pts, edges, hidden, ox, scale) {
  // oblique projection: depth shifts a point right and up
  const p = pts.map(([x, y, z]) => [ox + scale * (x + 0.35 * z), 280 - scale * (y + 0.35 * z) - 100]);
  ctx.lineWidth = 3;
  for (const [a, b] of edges) {
    const off = hidden.includes(a) || hidden.includes(b);
    ctx.strokeStyle = off ? "#ccc" : "#444";
    ctx.setLineDash(off ? [4, 4] : []);
    ctx.beginPath();
    ctx.moveTo(...p[a]);
    ctx.lineTo(...p[b]);
    ctx.stroke();
  }
  ctx.setLineDash([]);
  p.forEach(([x, y], j) => {
    ctx.fillStyle = hidden.includes(j) ? "#e15759" : "#4e79a7";
    ctx.beginPath();
    ctx.arc(x, y, 5, 0, 2 * Math.PI);
    ctx.fill();
  });
}

function drawAugment() {
  const mode = document.querySelector("input[name=aug]:checked").value;
  const theta = Number($("aug-theta").value);
  $("aug-theta-val").textContent = theta;
  const info = $("aug-info");
  let r;
  try {
    r = JSON.parse(augment_preview(mode, theta, Number($("aug-seed").value), Number($("aug-frame").value)));
  } catch (e) {
    return fail(info, e);
  }
  const cv = $("aug");
  const ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.fillStyle = "#222";
  ctx.fillText("original", 20, 20);
  ctx.fillText(mode === "rotate" ? "rotated about the vertical axis" : "occluded joints zeroed", 340, 20);
  drawSkeleton(ctx, r.before, r.edges, [], 160, 110);
  drawSkeleton(ctx, r.after, r.edges, r.occluded, 480, 110);
  info.textContent =
    mode === "rotate"
      ? `theta = ${(r.theta * 180 / Math.PI).toFixed(0)} deg`
      : `occluded: ${r.occluded.length ? r.occluded.map((j) => r.joints[j]).join(", ") : "none (k = 0 drawn)"}`;
}

function drawMetrics() {
  const out = $("metrics-out");
  let m;
  try {
    m = JSON.parse(segment_metrics($("m-pred").value, $("m-gt").value));
  } catch (e) {
    return fail(out, e);
  }
  const cv = $("bars");
  const ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  const frames = Math.max(...m.gt.map((s) => s.end), 1);
  const w = (cv.width - 50) / frames;
  [["pred", m.pred, 8], ["gt", m.gt, 40]].forEach(([name, segs, y]) => {
    ctx.fillStyle = "#222";
    ctx.fillText(name, 0, y + 15);
    for (const s of segs) {
      ctx.fillStyle = PALETTE[s.class % PALETTE.length];
      ctx.fillRect(50 + s.start * w, y, (s.end - s.start) * w - 1, 22);
    }
  });
  const f = (x) => x.toFixed(2);
  out.innerHTML = `<table><tr><th>Acc</th><th>Edit</th><th>F1@10</th><th>F1@25</th><th>F1@50</th></tr>
    <tr><td>${f(m.acc)}</td><td>${f(m.edit)}</td><td>${f(m.f1_10)}</td><td>${f(m.f1_25)}</td><td>${f(m.f1_50)}</td></tr></table>`;
}

await init();
const sel = $("graph-source");
for (const s of JSON.parse(embedding_sources())) sel.add(new Option(s.replace("_", " "), s));
for (const id of ["graph-source", "graph-metric", "graph-norm"]) $(id).addEventListener("change", drawGraph);
for (const el of document.querySelectorAll("input[name=aug], #aug-theta, #aug-seed, #aug-frame")) {
  el.addEventListener("input", drawAugment);
}
for (const id of ["m-pred", "m-gt"]) $(id).addEventListener("input", drawMetrics);
drawGraph();
drawAugment();
drawMetrics();
