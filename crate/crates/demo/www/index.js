import init, { LifeDemo, crossing_map_rgba, plane_fit } from "./pkg/worldprog_demo.js";

const $ = (id) => document.getElementById(id);

function paint(canvas, width, height, rgba, scale = 1) {
  canvas.width = width;
  canvas.height = height;
  canvas.style.width = `${width * scale}px`;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), width, height), 0, 0);
}

function report(target, fn) {
  try {
    fn();
  } catch (err) {
    target.textContent = `error: ${err.message ?? err}`;
  }
}

let life = null;

function drawLife() {
  paint($("life-canvas"), life.width(), life.height(), life.rgba());
  $("life-gen").textContent = life.generation();
  $("life-f1").textContent = life.f1().toFixed(3);
}

function resetLife() {
  report($("life-f1"), () => {
    life?.free();
    life = new LifeDemo(24, 32, 0.3, Number($("life-seed").value), $("life-birth").value, $("life-survive").value);
    drawLife();
  });
}

function drawMap() {
  const [w, h] = [160, 48];
  report($("pl-result"), () => {
    const rgba = crossing_map_rgba(w, h, Number($("st-frames").value), Number($("st-radius").value));
    paint($("st-canvas"), w, h, rgba, 3);
  });
}

function fitPlane() {
  report($("pl-result"), () => {
    const r = plane_fit(Number($("pl-seed").value), 1000, Number($("pl-out").value), Number($("pl-thr").value));
    const v = (a) => a.map((c) => c.toFixed(4)).join(", ");
    $("pl-result").textContent =
      `planted normal  [${v(r.slice(0, 3))}]\n` +
      `fitted normal   [${v(r.slice(3, 6))}]\n` +
      `angle error     ${r[6].toFixed(3)} deg\n` +
      `inlier ratio    ${r[7].toFixed(3)}`;
  });
}

await init();
$("life-reset").onclick = resetLife;
$("life-step").onclick = () => { life.step(); drawLife(); };
$("life-run").onclick = () => { for (let i = 0; i < 10; i++) life.step(); drawLife(); };
$("st-draw").onclick = drawMap;
$("pl-fit").onclick = fitPlane;
resetLife();
drawMap();
fitPlane();
