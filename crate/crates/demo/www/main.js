import init, { Demo } from "./pkg/provfilter_demo.js";

const $ = (id) => document.getElementById(id);
let demo = null;
let host = 0;
let donor = 1;

function paint(canvas, rgba, w, h) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, w, h);
  if (rgba.length) ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function markGallery() {
  [...$("gallery").children].forEach((c, i) => {
    c.className = i === host ? "host" : i === donor ? "donor" : "";
  });
}

function build() {
  const t = performance.now();
  $("status").textContent = "Extracting features and building the index…";
  setTimeout(() => {
    demo?.free();
    demo = new Demo(+$("count").value, +$("seed").value, $("backend").value);
    const s = JSON.parse(demo.stats());
    $("stats").textContent = `${s.images} images, ${s.descriptors} descriptors, ${(s.memory_bytes / 1024).toFixed(0)} KiB`;
    const g = $("gallery");
    g.replaceChildren();
    for (let i = 0; i < demo.len(); i++) {
      const c = document.createElement("canvas");
      c.width = demo.width();
      c.height = demo.height();
      c.title = demo.image_id(i);
      paint(c, demo.image_rgba(i), c.width, c.height);
      c.onclick = (e) => {
        if (e.shiftKey) donor = i;
        else host = i;
        markGallery();
        paint($("query"), demo.image_rgba(host), demo.width(), demo.height());
        paint($("mask"), [], demo.width(), demo.height());
      };
      g.appendChild(c);
    }
    host = 0;
    donor = 1;
    markGallery();
    paint($("query"), demo.image_rgba(host), demo.width(), demo.height());
    $("status").textContent = `Ready (${((performance.now() - t) / 1000).toFixed(1)} s).`;
  }, 10);
}

function row(rank, e, cls) {
  return `<tr class="${cls}"><td>${rank}</td><td>${e.image_id}</td><td>${e.votes}</td><td>${e.score.toFixed(3)}</td></tr>`;
}

function table(title, list) {
  const hid = demo.image_id(host);
  const did = demo.image_id(donor);
  const rows = list.entries.slice(0, 8).map((e, i) =>
    row(i + 1, e, e.image_id === hid ? "hit-host" : e.image_id === did ? "hit-donor" : ""));
  return `<div><b>${title}</b><table><tr><th>#</th><th>image</th><th>votes</th><th>score</th></tr>${rows.join("")}</table></div>`;
}

function search() {
  const t = performance.now();
  const r = JSON.parse(demo.run());
  const ms = (performance.now() - t).toFixed(0);
  $("lists").innerHTML = `<div class="views">${table("Tier 1", r.tier1)}${table("Final", r.final)}</div>`;
  $("verdict").textContent = `verdict: ${r.verdict}; r_best: ${r.r_best ?? "none"}; ` +
    `${r.tier2.length} tier-2 list(s); coverage ${(r.mask_info?.coverage ?? 0).toFixed(3)}; ${ms} ms`;
  paint($("mask"), $("showmask").checked ? demo.mask_rgba() : [], demo.width(), demo.height());
}

$("query").parentElement.onclick = (e) => {
  if (!demo) return;
  const rect = e.currentTarget.getBoundingClientRect();
  const x = Math.round(((e.clientX - rect.left) / rect.width) * demo.width());
  const y = Math.round(((e.clientY - rect.top) / rect.height) * demo.height());
  paint($("query"), demo.compose(host, donor, x, y, +$("size").value), demo.width(), demo.height());
  search();
};
$("dup").onclick = () => {
  paint($("query"), demo.select(host), demo.width(), demo.height());
  search();
};
$("showmask").onchange = () => {
  paint($("mask"), $("showmask").checked ? demo.mask_rgba() : [], demo.width(), demo.height());
};
$("build").onclick = build;

await init();
build();
