import init, { Session, bar_image, gradient_check } from "./pkg/convnet_web.js";

const SIDE = 8;
const $ = (id) => document.getElementById(id);

let session;
let running = false;
let pixels = new Float64Array(SIDE * SIDE);
let barSeed = 1;

function reset() {
  running = false;
  $("run").textContent = "train";
  session = new Session(Number($("seed").value), Number($("alpha").value), 8, 128);
  drawCurve();
  refresh();
}

function loop() {
  if (!running) return;
  session.step(2);
  drawCurve();
  refresh();
  if (session.epoch() >= 400) {
    running = false;
    $("run").textContent = "train";
    return;
  }
  requestAnimationFrame(loop);
}

function drawCurve() {
  const c = $("curve"), g = c.getContext("2d");
  const losses = session.losses();
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#ddd";
  g.strokeRect(0, 0, c.width, c.height);
  if (losses.length) {
    const top = Math.max(...losses), n = Math.max(losses.length, 100);
    g.strokeStyle = "#1f5fa8";
    g.beginPath();
    losses.forEach((v, i) => {
      const x = (i / (n - 1)) * c.width, y = c.height - (v / top) * (c.height - 10);
      i ? g.lineTo(x, y) : g.moveTo(x, y);
    });
    g.stroke();
  }
  const acc = session.epoch() ? ` held-out accuracy ${session.heldout_accuracy().toFixed(3)}` : "";
  const last = losses.length ? ` loss ${losses[losses.length - 1].toFixed(6)}` : "";
  $("status").textContent = `epoch ${session.epoch()}${last}${acc}`;
}

// Paints `values` (row-major side x side) as grey levels scaled to their own max.
function paint(canvas, values, side, scale) {
  canvas.width = side;
  canvas.height = side;
  const g = canvas.getContext("2d"), img = g.createImageData(side, side);
  const top = scale ?? Math.max(1e-12, ...values);
  values.forEach((v, i) => {
    const level = 255 - Math.round(255 * Math.min(1, Math.max(0, v / top)));
    img.data.set([level, level, level, 255], i * 4);
  });
  g.putImageData(img, 0, 0);
}

function mapCanvases(holder, count) {
  while (holder.children.length < count) holder.appendChild(document.createElement("canvas"));
  while (holder.children.length > count) holder.lastChild.remove();
  return [...holder.children];
}

function refresh() {
  const grid = $("grid");
  paint(grid, pixels, SIDE, 1);
  const maps = session.feature_maps(pixels);
  const conv = maps.conv(), pooled = maps.pooled();
  const cs = maps.conv_side, ps = maps.pool_side;
  mapCanvases($("convmaps"), maps.count).forEach((c, k) => paint(c, conv.slice(k * cs * cs, (k + 1) * cs * cs), cs));
  mapCanvases($("poolmaps"), maps.count).forEach((c, k) => paint(c, pooled.slice(k * ps * ps, (k + 1) * ps * ps), ps));
  maps.free();
  const p = session.predict(pixels);
  const label = p[0] >= p[1] ? "horizontal" : "vertical";
  $("prediction").textContent = `horizontal ${p[0].toFixed(6)}, vertical ${p[1].toFixed(6)}: ${label}`;
}

function toggleCell(ev) {
  const r = $("grid").getBoundingClientRect();
  const j = Math.floor(((ev.clientX - r.left) / r.width) * SIDE);
  const i = Math.floor(((ev.clientY - r.top) / r.height) * SIDE);
  if (i < 0 || j < 0 || i >= SIDE || j >= SIDE) return;
  pixels[i * SIDE + j] = pixels[i * SIDE + j] > 0.5 ? 0 : 1;
  refresh();
}

function check() {
  const out = $("report");
  try {
    const text = gradient_check(Number($("gcseed").value), $("fault").value);
    out.textContent = text;
    out.className = text.endsWith("PASS") ? "pass" : "fail";
  } catch (e) {
    out.textContent = String(e);
    out.className = "fail";
  }
}

await init();
$("reset").onclick = reset;
$("run").onclick = () => {
  running = !running;
  $("run").textContent = running ? "pause" : "train";
  if (running) requestAnimationFrame(loop);
};
$("grid").onclick = toggleCell;
$("hbar").onclick = () => { pixels = bar_image(barSeed++, false); refresh(); };
$("vbar").onclick = () => { pixels = bar_image(barSeed++, true); refresh(); };
$("clear").onclick = () => { pixels = new Float64Array(SIDE * SIDE); refresh(); };
$("check").onclick = check;
pixels = bar_image(barSeed++, false);
reset();
check();
