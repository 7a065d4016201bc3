import init, { divergence_diagram, weight_dynamics, regret_race } from './pkg/rpts_wasm.js';

const ARM_COLORS = ['#1f6fd6', '#e07b00'];

function num(id) { return Number(document.getElementById(id).value); }
function el(id) { return document.getElementById(id); }

function setStatus(id, text, isError = false) {
  const node = el(id);
  node.textContent = text;
  node.className = isError ? 'status error' : 'status';
}

// Runs a wasm call after the browser has painted the status line.
function busy(statusId, fn) {
  setStatus(statusId, 'computing…');
  setTimeout(() => {
    try {
      fn();
    } catch (e) {
      setStatus(statusId, String(e), true);
    }
  }, 20);
}

// Maps data coordinates to a canvas with margins, draws axes and ticks.
function makePlot(canvas, xMin, xMax, yMin, yMax, xLabel, yLabel) {
  const ctx = canvas.getContext('2d');
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const m = { left: 58, right: 58, top: 14, bottom: 38 };
  const w = canvas.width - m.left - m.right;
  const h = canvas.height - m.top - m.bottom;
  const sx = x => m.left + (x - xMin) / (xMax - xMin) * w;
  const sy = y => m.top + h - (y - yMin) / (yMax - yMin) * h;

  ctx.strokeStyle = '#999';
  ctx.fillStyle = '#444';
  ctx.lineWidth = 1;
  ctx.font = '12px system-ui';
  ctx.strokeRect(m.left, m.top, w, h);
  const ticks = 5;
  for (let i = 0; i <= ticks; i++) {
    const x = xMin + (xMax - xMin) * i / ticks;
    const y = yMin + (yMax - yMin) * i / ticks;
    ctx.textAlign = 'center';
    ctx.fillText(formatTick(x), sx(x), m.top + h + 16);
    ctx.textAlign = 'right';
    ctx.fillText(formatTick(y), m.left - 6, sy(y) + 4);
  }
  ctx.textAlign = 'center';
  ctx.fillText(xLabel, m.left + w / 2, canvas.height - 6);
  ctx.save();
  ctx.translate(14, m.top + h / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(yLabel, 0, 0);
  ctx.restore();
  return { ctx, sx, sy, m, w, h };
}

function formatTick(v) {
  if (v === 0) return '0';
  const a = Math.abs(v);
  if (a >= 1000) return v.toExponential(0);
  if (a >= 1) return v.toPrecision(3).replace(/\.?0+$/, '');
  return v.toPrecision(2);
}

function polyline(plot, xs, ys, color, width = 1, dash = []) {
  const { ctx, sx, sy } = plot;
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.setLineDash(dash);
  ctx.beginPath();
  for (let i = 0; i < xs.length; i++) {
    const [px, py] = [sx(xs[i]), sy(ys[i])];
    if (i === 0) ctx.moveTo(px, py); else ctx.lineTo(px, py);
  }
  ctx.stroke();
  ctx.setLineDash([]);
}

function legend(plot, entries) {
  const { ctx, m } = plot;
  let y = m.top + 16;
  ctx.font = '12px system-ui';
  ctx.textAlign = 'left';
  for (const [color, label] of entries) {
    ctx.strokeStyle = color;
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.moveTo(m.left + plot.w - 170, y - 4);
    ctx.lineTo(m.left + plot.w - 146, y - 4);
    ctx.stroke();
    ctx.fillStyle = '#333';
    ctx.fillText(label, m.left + plot.w - 140, y);
    y += 17;
  }
}

function parseParticles(text) {
  const rows = text.split('\n').map(s => s.trim()).filter(s => s.length > 0);
  return rows.map(row => {
    const parts = row.split(',').map(Number);
    if (parts.length !== 2 || parts.some(Number.isNaN)) {
      throw new Error(`bad particle line: "${row}"`);
    }
    return parts;
  });
}

// --- Panel 1: divergence diagram ---

function drawDiagram() {
  const particles = parseParticles(el('dg-particles').value);
  const request = { theta_star: [num('dg-t0'), num('dg-t1')], particles };
  const res = JSON.parse(divergence_diagram(JSON.stringify(request)));

  const lineOf = {};
  for (const line of res.lines) lineOf[line.particle] = line;
  const evalLine = (line, r) => line.at_zero + (line.at_one - line.at_zero) * r;

  // Scale to the envelope: stray lines may sit far above it.
  let envMax = 0;
  for (const bp of res.breakpoints) {
    for (const p of bp.particles) envMax = Math.max(envMax, evalLine(lineOf[p], bp.r));
  }
  const yMax = Math.max(envMax * 2.5, 0.05);

  const plot = makePlot(el('dg-canvas'), 0, 1, 0, yMax, 'arm-0 play frequency r', 'divergence D(r)');
  for (const line of res.lines) {
    polyline(plot, [0, 1], [line.at_zero, line.at_one], '#c9c9c9', 1);
  }
  for (let k = 0; k < res.dominant.length; k++) {
    const line = lineOf[res.dominant[k]];
    const [r0, r1] = [res.breakpoints[k].r, res.breakpoints[k + 1].r];
    polyline(plot, [r0, r1], [evalLine(line, r0), evalLine(line, r1)],
      ARM_COLORS[line.optimal_arm], 3);
  }
  const { ctx, sx, sy } = plot;
  for (const bp of res.breakpoints) {
    const y = evalLine(lineOf[bp.particles[0]], bp.r);
    ctx.fillStyle = '#222';
    ctx.beginPath();
    ctx.arc(sx(bp.r), sy(Math.min(y, yMax)), 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  for (const r of res.contraction_set) {
    const owner = res.breakpoints.find(bp => bp.r === r) ?? res.breakpoints[0];
    const y = evalLine(lineOf[owner.particles[0]], r);
    ctx.strokeStyle = '#d11';
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(sx(r), sy(Math.min(y, yMax)), 7, 0, 2 * Math.PI);
    ctx.stroke();
  }
  legend(plot, [
    [ARM_COLORS[0], 'dominant, plays arm 0'],
    [ARM_COLORS[1], 'dominant, plays arm 1'],
    ['#d11', 'contraction set'],
  ]);
  setStatus('dg-status',
    `${res.lines.length} particles, ${res.breakpoints.length - 2} interior crossings, ` +
    `contraction set {${res.contraction_set.map(r => r.toFixed(3)).join(', ')}}`);
}

// --- Panel 2: weight dynamics ---

function drawDynamics() {
  const request = {
    theta_star: [num('dy-t0'), num('dy-t1')],
    algorithm: el('dy-alg').value,
    n: num('dy-n'),
    horizon: num('dy-t'),
    seed: num('dy-seed'),
  };
  const res = JSON.parse(weight_dynamics(JSON.stringify(request)));
  const horizon = res.times[res.times.length - 1];
  const n = res.weights[0].length;

  const plot = makePlot(el('dy-canvas'), 0, horizon, 0, 1, 'step t', 'particle weight');
  const { ctx, sx, sy } = plot;
  for (const t of res.regen_times) {
    ctx.strokeStyle = 'rgba(220, 80, 120, 0.35)';
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(sx(t), sy(0));
    ctx.lineTo(sx(t), sy(1));
    ctx.stroke();
  }
  for (let i = 0; i < n; i++) {
    polyline(plot, res.times, res.weights.map(row => row[i]),
      `hsl(${Math.round(i * 360 / n)} 65% 45%)`, 1.2);
  }
  polyline(plot, res.times, res.arm0_freq, '#000', 1.5, [6, 4]);

  const finalWeights = res.weights[res.weights.length - 1];
  const top = finalWeights
    .map((w, i) => [w, i])
    .sort((a, b) => b[0] - a[0])
    .slice(0, 3)
    .map(([w, i]) => `#${i}: ${w.toFixed(3)}`)
    .join(', ');
  setStatus('dy-status',
    `${res.regen_times.length} regenerations; final arm-0 frequency ` +
    `${res.arm0_freq[res.arm0_freq.length - 1].toFixed(3)}; top weights ${top}`);
  legend(plot, [['#000', 'arm-0 frequency (dashed)']]);
}

// --- Panel 3: regret race ---

function drawRace() {
  const theta = el('rc-theta').value.split(',').map(s => Number(s.trim()));
  if (theta.some(Number.isNaN)) throw new Error('bad arm means');
  const request = {
    theta_star: theta,
    n: num('rc-n'),
    horizon: num('rc-t'),
    runs: num('rc-runs'),
    seed: num('rc-seed'),
  };
  const res = JSON.parse(regret_race(JSON.stringify(request)));

  const series = [
    ['pts', '#c23b22', res.pts],
    ['rpts', '#1a7f37', res.rpts],
    ['exact TS', '#1f6fd6', res.ts_beta],
  ];
  let yMax = 0;
  for (const [, , s] of series) {
    for (let i = 0; i < s.mean_cum.length; i++) {
      yMax = Math.max(yMax, s.mean_cum[i] + s.stderr_cum[i]);
    }
  }
  const horizon = res.times[res.times.length - 1];
  const plot = makePlot(el('rc-canvas'), 0, horizon, 0, yMax * 1.05,
    'step t', 'mean cumulative regret');
  const { ctx, sx, sy } = plot;
  for (const [, color, s] of series) {
    ctx.fillStyle = color + '22';
    ctx.beginPath();
    for (let i = 0; i < res.times.length; i++) {
      const [px, py] = [sx(res.times[i]), sy(s.mean_cum[i] + s.stderr_cum[i])];
      if (i === 0) ctx.moveTo(px, py); else ctx.lineTo(px, py);
    }
    for (let i = res.times.length - 1; i >= 0; i--) {
      ctx.lineTo(sx(res.times[i]), sy(Math.max(0, s.mean_cum[i] - s.stderr_cum[i])));
    }
    ctx.closePath();
    ctx.fill();
  }
  for (const [, color, s] of series) polyline(plot, res.times, s.mean_cum, color, 2);
  legend(plot, series.map(([name, color, s]) =>
    [color, `${name}: ${s.mean_cum[s.mean_cum.length - 1].toFixed(1)} at T`]));
  setStatus('rc-status', `${request.runs} runs per algorithm, horizon ${horizon}`);
}

// --- Wiring ---

function randomizeParticles() {
  const n = Math.max(2, Math.min(60, num('dg-n')));
  const rows = [];
  for (let i = 0; i < n; i++) {
    rows.push(`${Math.random().toFixed(3)},${Math.random().toFixed(3)}`);
  }
  el('dg-particles').value = rows.join('\n');
  busy('dg-status', drawDiagram);
}

async function main() {
  await init();
  el('diagram-form').addEventListener('submit', e => { e.preventDefault(); busy('dg-status', drawDiagram); });
  el('dg-random').addEventListener('click', randomizeParticles);
  el('dyn-form').addEventListener('submit', e => { e.preventDefault(); busy('dy-status', drawDynamics); });
  el('race-form').addEventListener('submit', e => { e.preventDefault(); busy('rc-status', drawRace); });
  busy('dg-status', drawDiagram);
}

main();
