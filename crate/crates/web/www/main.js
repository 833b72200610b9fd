import init, { fixture_names, fixture_source, sample_image, solve_order } from "./pkg/polyimage_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("plot");
const ctx = canvas.getContext("2d");

let view = null;    // { lo, hi } of the drawing window
let points = [];
let grid = null;

function setStatus(text, isError = false) {
  $("status").textContent = text;
  $("status").className = isError ? "err" : "";
}

function toPixel([y1, y2]) {
  const { lo, hi } = view;
  return [
    ((y1 - lo[0]) / (hi[0] - lo[0])) * canvas.width,
    (1 - (y2 - lo[1]) / (hi[1] - lo[1])) * canvas.height,
  ];
}

function draw() {
  ctx.fillStyle = "#fff";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!view) return;
  if (grid) {
    const cw = canvas.width / (grid.width - 1);
    const ch = canvas.height / (grid.height - 1);
    ctx.fillStyle = "rgba(40, 110, 220, 0.35)";
    grid.inside.forEach((inside, k) => {
      if (!inside) return;
      const i = k % grid.width;
      const j = Math.floor(k / grid.width);
      const [px, py] = toPixel([
        grid.lo[0] + ((grid.hi[0] - grid.lo[0]) * i) / (grid.width - 1),
        grid.lo[1] + ((grid.hi[1] - grid.lo[1]) * j) / (grid.height - 1),
      ]);
      ctx.fillRect(px - cw / 2, py - ch / 2, cw, ch);
    });
  }
  ctx.fillStyle = "#c33";
  for (const p of points) {
    const [px, py] = toPixel(p);
    ctx.fillRect(px - 1, py - 1, 2, 2);
  }
}

function loadFixture(name) {
  $("problem").value = fixture_source(name);
  points = [];
  grid = null;
  view = null;
  draw();
  setStatus("");
  $("cert").textContent = "";
}

function onSample() {
  try {
    const res = JSON.parse(sample_image($("problem").value, Number($("count").value), 1n));
    points = res.points;
    view = { lo: res.box[0], hi: res.box[1] };
    draw();
    setStatus(`${points.length} image points, sampler acceptance ${res.acceptance.toFixed(3)}`);
  } catch (e) {
    setStatus(String(e.message ?? e), true);
  }
}

function onSolve() {
  setStatus("solving...");
  // let the status repaint before the solver blocks the thread
  setTimeout(() => {
    const t0 = performance.now();
    try {
      const n = Number($("res").value);
      grid = JSON.parse(solve_order($("problem").value, $("method").value, Number($("order").value), n, n));
      view = { lo: grid.lo, hi: grid.hi };
      draw();
      const secs = ((performance.now() - t0) / 1000).toFixed(2);
      setStatus(
        `${grid.accepted ? "certified" : "not accepted"}, residual ${grid.residual.toExponential(2)}, ` +
          `volume ~ ${grid.volume?.toFixed(4) ?? "-"}, violations ${grid.violations ?? "-"} (${secs} s)`,
      );
      $("cert").textContent = grid.certificate;
    } catch (e) {
      setStatus(String(e.message ?? e), true);
    }
  }, 10);
}

await init();
const select = $("fixture");
for (const name of JSON.parse(fixture_names())) {
  select.add(new Option(name, name));
}
select.addEventListener("change", () => loadFixture(select.value));
$("sample").addEventListener("click", onSample);
$("solve").addEventListener("click", onSolve);
loadFixture(select.value);
draw();
