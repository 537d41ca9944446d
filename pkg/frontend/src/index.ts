/**
 * Typed client for the atomsim command-line tool.
 *
 * Everything goes through the tool's stable external surface: the CLI
 * subcommands, the raw image format (8-byte little-endian width/height
 * header followed by little-endian uint16 samples) and the ground-truth
 * JSON sidecar schema. No simulation math lives on this side, and no
 * randomness either; frames are bit-identical to what the CLI writes for
 * the same (config, seed, frame index).
 */

import { execFile } from "node:child_process";
import { randomUUID } from "node:crypto";
import { promises as fs } from "node:fs";
import os from "node:os";
import path from "node:path";
import { promisify } from "node:util";

const execFileAsync = promisify(execFile);

export interface SiteTruth {
  row: number;
  col: number;
  occupied: boolean;
  lost: boolean;
  loss_time?: number;
}

export interface GroundTruth {
  sites: SiteTruth[];
  seed: number;
  frame_index: number;
}

export interface ImageU16 {
  width: number;
  height: number;
  /** Row-major samples; a zero-copy view onto the file buffer when the
   *  platform is little-endian and the payload is 2-byte aligned. */
  data: Uint16Array;
}

export interface Frame {
  image: ImageU16;
  truth: GroundTruth;
}

export interface GeneratorOptions {
  /** Command used to invoke the tool, e.g. ["atomsim"] or
   *  ["python3", "-m", "atomsim"]. Defaults to $ATOMSIM_CLI (split on
   *  whitespace) or ["atomsim"]. */
  command?: string[];
  /** Worker count passed to the tool; single frames default to 1. */
  threads?: number;
}

export class AtomsimError extends Error {}

function cliCommand(options?: GeneratorOptions): string[] {
  if (options?.command && options.command.length > 0) return options.command;
  const fromEnv = process.env.ATOMSIM_CLI;
  if (fromEnv && fromEnv.trim().length > 0) return fromEnv.trim().split(/\s+/);
  return ["atomsim"];
}

async function runCli(
  command: string[],
  args: string[],
  threads?: number,
): Promise<{ stdout: string; stderr: string }> {
  const [program, ...prefix] = command;
  const env = { ...process.env };
  if (threads !== undefined) env.ATOMSIM_THREADS = String(threads);
  try {
    return await execFileAsync(program, [...prefix, ...args], {
      env,
      maxBuffer: 64 * 1024 * 1024,
    });
  } catch (error) {
    const failure = error as { stderr?: string; message?: string };
    const detail = failure.stderr?.trim() || failure.message || String(error);
    throw new AtomsimError(detail.replace(/^error:\s*/, ""));
  }
}

/** Parse the tool's raw image format. */
export function decodeRawImage(payload: Buffer): ImageU16 {
  if (payload.length < 8) {
    throw new AtomsimError("raw image shorter than its 8-byte header");
  }
  const width = payload.readUInt32LE(0);
  const height = payload.readUInt32LE(4);
  const expected = width * height * 2;
  if (payload.length < 8 + expected) {
    throw new AtomsimError("raw payload shorter than header promises");
  }
  const start = payload.byteOffset + 8;
  let data: Uint16Array;
  if (os.endianness() === "LE" && start % 2 === 0) {
    data = new Uint16Array(payload.buffer, start, width * height);
  } else {
    data = new Uint16Array(width * height);
    for (let i = 0; i < data.length; i += 1) {
      data[i] = payload.readUInt16LE(8 + 2 * i);
    }
  }
  return { width, height, data };
}

export class GeneratorHandle {
  readonly configPath: string;
  private readonly workspace: string;
  private readonly options?: GeneratorOptions;
  private disposed = false;

  constructor(configPath: string, workspace: string, options?: GeneratorOptions) {
    this.configPath = configPath;
    this.workspace = workspace;
    this.options = options;
  }

  command(): string[] {
    return cliCommand(this.options);
  }

  threads(): number {
    return this.options?.threads ?? 1;
  }

  async scratchDir(): Promise<string> {
    if (this.disposed) throw new AtomsimError("generator handle already disposed");
    const dir = path.join(this.workspace, randomUUID());
    await fs.mkdir(dir, { recursive: true });
    return dir;
  }

  async dispose(): Promise<void> {
    this.disposed = true;
    await fs.rm(this.workspace, { recursive: true, force: true });
  }
}

/**
 * Validate a configuration (path or document) and return a handle with the
 * validation already paid for. Raises with the tool's own validation
 * message on bad input.
 */
export async function makeGenerator(
  source: string | object,
  options?: GeneratorOptions,
): Promise<GeneratorHandle> {
  const workspace = await fs.mkdtemp(path.join(os.tmpdir(), "atomsim-client-"));
  let configPath: string;
  if (typeof source === "string") {
    configPath = path.resolve(source);
  } else {
    configPath = path.join(workspace, "config.json");
    await fs.writeFile(configPath, JSON.stringify(source));
  }
  try {
    await runCli(cliCommand(options), ["validate", "--config", configPath]);
  } catch (error) {
    await fs.rm(workspace, { recursive: true, force: true });
    throw error;
  }
  return new GeneratorHandle(configPath, workspace, options);
}

/**
 * Generate one frame; pixels and ground truth are exactly what the CLI
 * writes for the same (config, seed, frame index).
 */
export async function generateFrame(
  handle: GeneratorHandle,
  seed: number,
  frameIndex: number,
): Promise<Frame> {
  if (!Number.isInteger(seed) || seed < 0) {
    throw new AtomsimError(`seed must be a nonnegative integer, got ${seed}`);
  }
  if (!Number.isInteger(frameIndex) || frameIndex < 0) {
    throw new AtomsimError(`frame index must be a nonnegative integer, got ${frameIndex}`);
  }
  const scratch = await handle.scratchDir();
  try {
    await runCli(
      handle.command(),
      [
        "generate",
        "--config", handle.configPath,
        "--seed", String(seed),
        "--count", "1",
        "--start", String(frameIndex),
        "--out", scratch,
        "--format", "raw",
      ],
      handle.threads(),
    );
    const stem = `frame_${String(frameIndex).padStart(6, "0")}`;
    const payload = await fs.readFile(path.join(scratch, `${stem}.raw`));
    const truthText = await fs.readFile(path.join(scratch, `${stem}.truth.json`), "utf8");
    // decodeRawImage may view the buffer, so the buffer must outlive scratch
    const image = decodeRawImage(payload);
    const truth = JSON.parse(truthText) as GroundTruth;
    return { image, truth };
  } finally {
    await fs.rm(scratch, { recursive: true, force: true });
  }
}

async function reportCommand(
  args: string[],
  options?: GeneratorOptions,
): Promise<Record<string, unknown>> {
  const { stdout } = await runCli(cliCommand(options), args);
  return JSON.parse(stdout) as Record<string, unknown>;
}

/** Occupancy-mixture fit over a directory of frames (fit-hist passthrough). */
export async function fitHist(
  configPath: string,
  imagesDir: string,
  extra: { radius?: number; binWidth?: number } = {},
  options?: GeneratorOptions,
): Promise<Record<string, unknown>> {
  const args = ["fit-hist", "--config", configPath, "--images", imagesDir];
  if (extra.radius !== undefined) args.push("--radius", String(extra.radius));
  if (extra.binWidth !== undefined) args.push("--bin-width", String(extra.binWidth));
  return reportCommand(args, options);
}

/** EM-gain tail fit over a directory of frames (fit-gain passthrough). */
export async function fitGain(
  imagesDir: string,
  extra: { range?: [number, number]; binWidth?: number; preamp?: number } = {},
  options?: GeneratorOptions,
): Promise<Record<string, unknown>> {
  const args = ["fit-gain", "--images", imagesDir];
  if (extra.range) args.push("--range", String(extra.range[0]), String(extra.range[1]));
  if (extra.binWidth !== undefined) args.push("--bin-width", String(extra.binWidth));
  if (extra.preamp !== undefined) args.push("--preamp", String(extra.preamp));
  return reportCommand(args, options);
}

/** Zernike spot fit over a directory of frames (fit-zernike passthrough). */
export async function fitZernike(
  configPath: string,
  imagesDir: string,
  extra: { site?: [number, number]; window?: number; grid?: number } = {},
  options?: GeneratorOptions,
): Promise<Record<string, unknown>> {
  const args = ["fit-zernike", "--config", configPath, "--images", imagesDir];
  if (extra.site) args.push("--site", String(extra.site[0]), String(extra.site[1]));
  if (extra.window !== undefined) args.push("--window", String(extra.window));
  if (extra.grid !== undefined) args.push("--grid", String(extra.grid));
  return reportCommand(args, options);
}

/** PSF inspection report (psf passthrough). */
export async function psfReport(
  configPath: string,
  options?: GeneratorOptions,
): Promise<Record<string, unknown>> {
  return reportCommand(["psf", "--config", configPath], options);
}

/** Version of the underlying tool (matches this package's version). */
export async function coreVersion(options?: GeneratorOptions): Promise<string> {
  const { stdout } = await runCli(cliCommand(options), ["--version"]);
  const match = stdout.trim().match(/(\d+\.\d+\.\S*)$/);
  if (!match) throw new AtomsimError(`unexpected version output: ${stdout.trim()}`);
  return match[1];
}
