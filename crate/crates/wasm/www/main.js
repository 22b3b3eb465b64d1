import init, { Demo, abbreviate, simulateTyping, keyHeatmap } from "./pkg/shorthand_wasm.js";

const $ = (id) => document.getElementById(id);

function fmt(v) {
  return v === null || v === undefined ? "n/a" : `${v.toFixed(1)}%`;
}

function showAbbrev() {
  const v = JSON.parse(abbreviate($("phrase").value));
  $("abbrev").textContent = v.abbreviation || "(empty)";
  $("ksr").textContent =
    `${v.abbrev_len} keys instead of ${v.full_len}. ` +
    `Saving if the first option is right: ${fmt(v.ksr_hit)}; if it is wrong: ${fmt(v.ksr_miss)}.`;
}

let typingSeed = 1;

function showNoise() {
  const sigma = Number($("sigma").value);
  $("sigma-val").textContent = sigma.toFixed(2);
  try {
    const t = JSON.parse(simulateTyping($("to-type").value, sigma, typingSeed));
    $("typed").textContent = t.typed;
    $("typed-note").textContent = `${t.changed} of ${t.intended.length} keys missed`;
  } catch (e) {
    $("typed").textContent = "";
    $("typed-note").textContent = String(e);
  }
  const kb = $("kb");
  kb.replaceChildren();
  let h;
  try {
    h = JSON.parse(keyHeatmap($("key").value.toLowerCase() || "g", sigma, 20000, 7));
  } catch (e) {
    return;
  }
  const max = Math.max(...h.freq);
  h.rows.forEach((row, r) => {
    const tr = kb.insertRow();
    [...row].forEach((label, c) => {
      const f = h.freq[r * row.length + c];
      const td = tr.insertCell();
      td.textContent = label;
      td.title = `${(100 * f).toFixed(1)}%`;
      td.style.background = `rgba(200, 40, 40, ${max > 0 ? f / max : 0})`;
      td.style.color = f / max > 0.5 ? "#fff" : "#222";
    });
  });
}

let demo;

function showExpansion() {
  $("expand-err").textContent = "";
  const list = $("options");
  list.replaceChildren();
  try {
    const opts = JSON.parse(
      demo.expand($("backend").value, $("context").value, $("query").value, $("noisy").checked, 5),
    );
    if (opts.length === 0) {
      $("expand-err").textContent = "no expansion found";
    }
    for (const o of opts) {
      const li = document.createElement("li");
      li.textContent = o.score === undefined ? `${o.phrase} (×${o.count})` : `${o.phrase} (log p ${o.score.toFixed(2)})`;
      list.append(li);
    }
  } catch (e) {
    $("expand-err").textContent = String(e);
  }
}

await init();
demo = new Demo();
$("ndialogs").textContent = demo.dialogCount();

$("phrase").addEventListener("input", showAbbrev);
for (const id of ["sigma", "key", "to-type"]) $(id).addEventListener("input", showNoise);
$("retype").addEventListener("click", () => { typingSeed += 1; showNoise(); });
for (const id of ["context", "query", "noisy", "backend"]) $(id).addEventListener("input", showExpansion);

showAbbrev();
showNoise();
showExpansion();
