/**
 * Trainer CLI.
 *
 *   train --inputs <dir> --targets <dir> --out <checkpoint_dir>
 *         [--steps N] [--batch N] [--lr F] [--level N] [--filter N]
 *         [--widths a,b,c] [--seed N]
 *   serve --checkpoint <dir> <in.kpln> <out.kpln>
 *   eval-loss <pred.kpln> <gt.kpln>
 */

import * as fs from 'fs';
import * as path from 'path';

import { readKpln } from './kpln';
import { computeLosses } from './loss';
import { DEFAULT_TRAIN, loadDataset, saveCheckpoint, train, TrainConfig } from './train';
import { serve } from './serve';

interface Parsed {
  flags: Map<string, string>;
  positional: string[];
}

function parseArgs(argv: string[]): Parsed {
  const flags = new Map<string, string>();
  const positional: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith('--')) {
      const value = argv[i + 1];
      if (value === undefined) {
        throw new Error(`flag ${arg} needs a value`);
      }
      flags.set(arg.slice(2), value);
      i++;
    } else {
      positional.push(arg);
    }
  }
  return { flags, positional };
}

function requireFlag(parsed: Parsed, name: string): string {
  const value = parsed.flags.get(name);
  if (value === undefined) {
    throw new Error(`missing required flag --${name}`);
  }
  return value;
}

async function cmdTrain(parsed: Parsed): Promise<number> {
  const inputs = requireFlag(parsed, 'inputs');
  const targets = requireFlag(parsed, 'targets');
  const out = requireFlag(parsed, 'out');
  const cfg: TrainConfig = {
    ...DEFAULT_TRAIN,
    levelId: parseInt(parsed.flags.get('level') ?? '0', 10),
    steps: parseInt(parsed.flags.get('steps') ?? String(DEFAULT_TRAIN.steps), 10),
    batchSize: parseInt(parsed.flags.get('batch') ?? String(DEFAULT_TRAIN.batchSize), 10),
    learningRate: parseFloat(parsed.flags.get('lr') ?? String(DEFAULT_TRAIN.learningRate)),
    seed: parseInt(parsed.flags.get('seed') ?? '0', 10),
  };
  if (parsed.flags.has('filter')) {
    cfg.filterSize = parseInt(parsed.flags.get('filter')!, 10);
  }
  if (parsed.flags.has('widths')) {
    const widths = parsed.flags.get('widths')!.split(',').map((w) => parseInt(w, 10));
    if (widths.length !== 3 || widths.some((w) => !(w > 0))) {
      throw new Error('--widths needs three positive integers, e.g. 32,64,128');
    }
    cfg.widths = widths as [number, number, number];
  }

  const data = loadDataset(inputs, targets);
  console.log(
    `training on ${data.names.length} pairs ` +
      `(${data.numPlanes} planes, ${data.resolution}x${data.resolution})`,
  );
  const logEvery = Math.max(1, Math.floor(cfg.steps / 20));
  const result = train(data, cfg, (step, loss) => {
    if (step % logEvery === 0 || step === cfg.steps - 1) {
      console.log(`step ${step}: loss ${loss.toExponential(4)}`);
    }
  });
  await saveCheckpoint(out, result.model);
  fs.writeFileSync(
    path.join(out, 'losses.json'),
    JSON.stringify({ config: { ...cfg }, losses: result.losses }, null, 2),
  );
  console.log(`checkpoint written to ${out}`);
  return 0;
}

async function cmdServe(parsed: Parsed): Promise<number> {
  const checkpoint = requireFlag(parsed, 'checkpoint');
  const [inPath, outPath] = parsed.positional;
  if (!inPath || !outPath) {
    throw new Error('serve needs <in.kpln> <out.kpln>');
  }
  await serve(checkpoint, inPath, outPath);
  return 0;
}

function cmdEvalLoss(parsed: Parsed): number {
  const [predPath, gtPath] = parsed.positional;
  if (!predPath || !gtPath) {
    throw new Error('eval-loss needs <pred.kpln> <gt.kpln>');
  }
  const breakdown = computeLosses(readKpln(predPath), readKpln(gtPath));
  console.log(JSON.stringify(breakdown, null, 2));
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    const parsed = parseArgs(rest);
    switch (command) {
      case 'train':
        return await cmdTrain(parsed);
      case 'serve':
        return await cmdServe(parsed);
      case 'eval-loss':
        return cmdEvalLoss(parsed);
      default:
        console.error('usage: cli.js train|serve|eval-loss ...');
        return 2;
    }
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
