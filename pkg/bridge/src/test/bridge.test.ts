import assert from 'node:assert/strict';
import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { test } from 'node:test';
import { FixtureLm, loadModel, surpriseBits } from '../model.js';
import { encodeReplay } from '../replay.js';
import { exportReplay } from '../export.js';
import { sparsify } from '../protocol.js';
import { BRIDGE_CLI, ServerSession, parseCsv, runToolkit } from './helpers.js';
import { spawnSync } from 'node:child_process';

const MODEL_SPEC = 'fixture:7:600';
const workdir = mkdtempSync(join(tmpdir(), 'bridge-test-'));

test('fixture model is deterministic, normalized, and context sensitive', () => {
  const model = new FixtureLm(7, 600);
  const a = model.probs([1, 2, 3]);
  const b = model.probs([1, 2, 3]);
  assert.deepEqual(Array.from(a), Array.from(b));
  const other = model.probs([1, 2, 4]);
  assert.notDeepEqual(Array.from(a), Array.from(other));
  const total = a.reduce((acc, p) => acc + p, 0);
  assert.ok(Math.abs(total - 1) < 1e-12);
  assert.ok(a.every((p) => p > 0));
});

test('sparsify keeps the top M by probability and accounts all mass', () => {
  const model = new FixtureLm(7, 600);
  const reply = sparsify(model.probs([]), 50);
  assert.equal(reply.probs_sparse.length, 50);
  const keptMass = reply.probs_sparse.reduce((acc, [, p]) => acc + p, 0);
  assert.ok(Math.abs(keptMass + reply.rest_mass - 1) < 1e-9);
  const probs = reply.probs_sparse.map(([, p]) => p);
  for (let i = 1; i < probs.length; i++) assert.ok(probs[i] <= probs[i - 1]);
  assert.ok(reply.rest_mass > 0);
});

test('handshake advertises the vocabulary and dist replies are normalized', async () => {
  const session = new ServerSession(MODEL_SPEC);
  const hello = await session.request({ type: 'hello', version: 1 });
  assert.equal(hello.type, 'model');
  assert.equal((hello as { n_vocab: number }).n_vocab, 600);

  const dist = await session.request({ type: 'next', prefix: [5, 9] });
  assert.equal(dist.type, 'dist');
  const reply = dist as { probs_sparse: [number, number][]; rest_mass: number };
  const total =
    reply.probs_sparse.reduce((acc, [, p]) => acc + p, 0) + reply.rest_mass;
  assert.ok(Math.abs(total - 1) <= 1e-6);

  const repeat = await session.request({ type: 'next', prefix: [5, 9] });
  assert.deepEqual(repeat, dist); // deterministic given a fixed prefix

  assert.equal(await session.close(), 0);
});

test('malformed requests get error replies and the server keeps serving', async () => {
  const session = new ServerSession(MODEL_SPEC);
  session.sendRaw('this is not json');
  const bad = JSON.parse(await session.nextLine());
  assert.equal(bad.type, 'error');

  const unknown = await session.request({ type: 'mystery' });
  assert.equal(unknown.type, 'error');

  const badPrefix = await session.request({ type: 'next', prefix: [99999] });
  assert.equal(badPrefix.type, 'error');

  const still = await session.request({ type: 'hello', version: 1 });
  assert.equal(still.type, 'model');
  assert.equal(await session.close(), 0);
});

test('hello with a wrong version is refused', async () => {
  const session = new ServerSession(MODEL_SPEC);
  const reply = await session.request({ type: 'hello', version: 2 });
  assert.equal(reply.type, 'error');
  await session.close();
});

test('replay encoder validates rows and tokens', () => {
  const row = new Float64Array([0.5, 0.5]);
  assert.throws(() => encodeReplay(2, [0], []), /rows/);
  assert.throws(() => encodeReplay(2, [5], [row]), /vocabulary/);
  assert.throws(
    () => encodeReplay(2, [0], [new Float64Array([0.9, 0.3])]),
    /sums/,
  );
  const buffer = encodeReplay(2, [0], [row]);
  assert.equal(buffer.length, 16 + 4 + 8);
  assert.equal(buffer.toString('ascii', 0, 4), 'MIRO');
  assert.equal(buffer.readUInt32LE(12), 1);
});

test('exported replay validates in the primary toolkit and matches own log-probs', () => {
  const model = loadModel(MODEL_SPEC);
  // A short deterministic sequence: greedy walk of the model itself.
  const tokens: number[] = [];
  for (let i = 0; i < 40; i++) {
    const row = model.probs(tokens);
    let best = 0;
    for (let j = 1; j < row.length; j++) if (row[j] > row[best]) best = j;
    tokens.push(best);
  }
  const replayPath = join(workdir, 'export.miro');
  exportReplay(model, [], tokens, replayPath);

  // Header step count equals rows written (n_steps field + file size).
  const raw = readFileSync(replayPath);
  assert.equal(raw.readUInt32LE(12), tokens.length);
  assert.equal(raw.length, 16 + 4 * tokens.length + 4 * 600 * tokens.length);

  // The primary's replay reader accepts it.
  const estimate = runToolkit(['estimate', '--replay', replayPath, '--step', '0']);
  assert.equal(estimate.status, 0, estimate.stderr);
  assert.match(estimate.stdout, /s_hat=/);

  // Teacher-forced surprises reported by the primary match the model's own
  // log-probabilities to well under 1e-4 bits (float32 storage error).
  const csvPath = join(workdir, 'replayed.csv');
  const generate = runToolkit([
    'generate', '--model', `replay:${replayPath}`, '--out', csvPath,
  ]);
  assert.equal(generate.status, 0, generate.stderr);
  const { rows } = parseCsv(readFileSync(csvPath, 'utf-8'));
  assert.equal(rows.length, tokens.length);
  const prefix: number[] = [];
  for (const [index, row] of rows.entries()) {
    const token = Number(row[1]);
    assert.equal(token, tokens[index]);
    const own = surpriseBits(model, prefix, token);
    assert.ok(
      Math.abs(Number(row[2]) - own) <= 1e-4,
      `step ${index}: primary ${row[2]} vs model ${own}`,
    );
    prefix.push(token);
  }
});

test('prompted exports condition rows on the prompt', () => {
  const model = loadModel(MODEL_SPEC);
  const prompt = [3, 1, 4];
  const tokens = [1, 5];
  const path = join(workdir, 'prompted.miro');
  exportReplay(model, prompt, tokens, path);
  const raw = readFileSync(path);
  const first = raw.readFloatLE(16 + 4 * tokens.length);
  assert.equal(first, Math.fround(model.probs(prompt)[0]));
});

test('export subcommand reads token and prompt files', () => {
  const tokensPath = join(workdir, 'tokens.txt');
  writeFileSync(tokensPath, '1 2 3 4');
  const outPath = join(workdir, 'cli-export.miro');
  const proc = spawnSync(
    'node',
    [BRIDGE_CLI, 'export', '--model', MODEL_SPEC, '--tokens-file', tokensPath,
     '--export', outPath],
    { encoding: 'utf-8' },
  );
  assert.equal(proc.status, 0, proc.stderr);
  assert.equal(readFileSync(outPath).readUInt32LE(12), 4);
});

test('mirostat run over the stdio bridge lands on its surprise target', () => {
  const csvPath = join(workdir, 'miro.csv');
  const result = runToolkit([
    'generate',
    '--model', `stdio:node ${BRIDGE_CLI} serve --model ${MODEL_SPEC}`,
    '--policy', 'miro:3',
    '--tokens', '200',
    '--seed', '11',
    '--out', csvPath,
  ]);
  assert.equal(result.status, 0, result.stderr);
  const { meta, rows } = parseCsv(readFileSync(csvPath, 'utf-8'));
  assert.equal(meta.get('rate_semantics'), 'controlled');
  assert.equal(rows.length, 200);
  const windowed = rows.slice(25).map((row) => Number(row[2]));
  const mean = windowed.reduce((acc, v) => acc + v, 0) / windowed.length;
  assert.ok(
    Math.abs(mean - 3) <= 0.3,
    `mean surprise over tokens 26..200 was ${mean}, expected 3 +/- 0.3`,
  );
});
