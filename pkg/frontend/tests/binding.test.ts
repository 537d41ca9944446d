import { execFile } from "node:child_process";
import { promises as fs } from "node:fs";
import os from "node:os";
import path from "node:path";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  AtomsimError,
  coreVersion,
  decodeRawImage,
  fitGain,
  generateFrame,
  makeGenerator,
  psfReport,
  type Frame,
  type GeneratorHandle,
} from "../src/index.js";

const execFileAsync = promisify(execFile);

const OPTS = { command: ["python3", "-m", "atomsim"] };

const EMCCD_DOC = {
  schema_version: 1,
  seed: 0,
  experiment: {
    sites: [
      [12, 12],
      [12, 20],
      [20, 16],
    ],
    filling_ratio: 0.6,
    survival_probability: 0.9,
    scattering_rate: 25000.0,
    exposure_time: 0.05,
  },
  optics: { numerical_aperture: 0.65 },
  camera: {
    emccd: {
      quantum_efficiency: 0.86,
      em_gain: 300.0,
      preamp_gain: 4.85,
      bias_clamp: 400.0,
      readout_sigma: 8.0,
      cic_rate: 0.01,
      exposure: 0.05,
      resolution: [32, 32],
    },
  },
};

const CMOS_DOC = {
  schema_version: 1,
  seed: 0,
  experiment: {
    sites: [
      [10, 10],
      [22, 22],
    ],
    filling_ratio: 0.7,
    survival_probability: 0.95,
    scattering_rate: 40000.0,
    exposure_time: 0.02,
  },
  optics: { numerical_aperture: 0.65 },
  camera: {
    cmos: {
      quantum_efficiency: 0.9,
      exposure: 0.02,
      resolution: [32, 32],
      offset_nominal: 100.0,
      offset_sigma_pixel: 0.4,
      column_flicker_beta: 0.3,
      gain: 2.0,
      gain_sigma: 0.02,
      dark_rate_shape: 2.0,
      dark_rate_scale: 1.0,
      row_noise_sigma: 0.5,
      read_noise_sigma: 1.2,
    },
  },
};

interface Reference {
  configPath: string;
  frames: Map<string, { payload: Buffer; truth: unknown }>;
}

let workspace: string;
const references = new Map<string, Reference>();
const handles = new Map<string, GeneratorHandle>();

const SEEDS = [101, 202];
const BATCH = 8;

async function runCli(args: string[], threads: string): Promise<void> {
  await execFileAsync("python3", ["-m", "atomsim", ...args], {
    env: { ...process.env, ATOMSIM_THREADS: threads },
    maxBuffer: 64 * 1024 * 1024,
  });
}

beforeAll(async () => {
  workspace = await fs.mkdtemp(path.join(os.tmpdir(), "binding-test-"));
  for (const [name, doc] of [
    ["emccd", EMCCD_DOC],
    ["cmos", CMOS_DOC],
  ] as const) {
    const configPath = path.join(workspace, `${name}.json`);
    await fs.writeFile(configPath, JSON.stringify(doc));
    const frames = new Map<string, { payload: Buffer; truth: unknown }>();
    for (const seed of SEEDS) {
      // reference corpus straight from the CLI, generated as one batch with
      // a worker pool (a different code path from the binding's singles)
      const outDir = path.join(workspace, `${name}-${seed}`);
      await runCli(
        [
          "generate",
          "--config", configPath,
          "--seed", String(seed),
          "--count", String(BATCH),
          "--out", outDir,
          "--format", "raw",
        ],
        "2",
      );
      for (let index = 0; index < BATCH; index += 1) {
        const stem = `frame_${String(index).padStart(6, "0")}`;
        frames.set(`${seed}:${index}`, {
          payload: await fs.readFile(path.join(outDir, `${stem}.raw`)),
          truth: JSON.parse(
            await fs.readFile(path.join(outDir, `${stem}.truth.json`), "utf8"),
          ),
        });
      }
    }
    references.set(name, { configPath, frames });
    handles.set(name, await makeGenerator(configPath, OPTS));
  }
});

afterAll(async () => {
  for (const handle of handles.values()) {
    await handle.dispose();
  }
  await fs.rm(workspace, { recursive: true, force: true });
});

function imageBytes(frame: Frame): Buffer {
  const { data } = frame.image;
  return Buffer.from(data.buffer, data.byteOffset, data.byteLength);
}

describe("binding equivalence with the CLI", () => {
  it("matches 20 random (config, seed, index) triples bit for bit", async () => {
    // deterministic LCG so the triple selection is reproducible
    let state = 0xdecafbad;
    const nextInt = (bound: number) => {
      state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
      return state % bound;
    };
    const names = ["emccd", "cmos"] as const;
    for (let trial = 0; trial < 20; trial += 1) {
      const name = names[nextInt(names.length)];
      const seed = SEEDS[nextInt(SEEDS.length)];
      const index = nextInt(BATCH);
      const reference = references.get(name)!;
      const expected = reference.frames.get(`${seed}:${index}`)!;
      const frame = await generateFrame(handles.get(name)!, seed, index);

      const expectedImage = decodeRawImage(expected.payload);
      expect(frame.image.width).toBe(expectedImage.width);
      expect(frame.image.height).toBe(expectedImage.height);
      expect(imageBytes(frame).equals(expected.payload.subarray(8))).toBe(true);
      expect(frame.truth).toStrictEqual(expected.truth);
    }
  });

  it("single-frame generation equals batch members (no state leakage)", async () => {
    const reference = references.get("emccd")!;
    for (const index of [0, 3, 7]) {
      const frame = await generateFrame(handles.get("emccd")!, 101, index);
      expect(imageBytes(frame).equals(reference.frames.get(`101:${index}`)!.payload.subarray(8))).toBe(
        true,
      );
    }
  });

  it("ground truth has the sidecar schema", async () => {
    const frame = await generateFrame(handles.get("emccd")!, 202, 2);
    expect(frame.truth.seed).toBe(202);
    expect(frame.truth.frame_index).toBe(2);
    expect(frame.truth.sites).toHaveLength(3);
    for (const site of frame.truth.sites) {
      expect(typeof site.row).toBe("number");
      expect(typeof site.occupied).toBe("boolean");
      if (site.lost) {
        expect(site.occupied).toBe(true);
        expect(site.loss_time).toBeGreaterThan(0);
        expect(site.loss_time).toBeLessThan(1);
      } else {
        expect(site.loss_time).toBeUndefined();
      }
    }
  });
});

describe("handle construction", () => {
  it("accepts inline documents and validates them", async () => {
    const handle = await makeGenerator(EMCCD_DOC, OPTS);
    const frame = await generateFrame(handle, 7, 0);
    expect(frame.image.width).toBe(32);
    await handle.dispose();
  });

  it("rejects invalid configs with the tool's validation message", async () => {
    const bad = structuredClone(EMCCD_DOC) as typeof EMCCD_DOC & {
      experiment: { filling_ratio: number };
    };
    bad.experiment.filling_ratio = 1.2;
    await expect(makeGenerator(bad, OPTS)).rejects.toThrowError(/filling_ratio/);
  });

  it("rejects unknown keys by name", async () => {
    const bad = { ...structuredClone(EMCCD_DOC), typo_section: {} };
    await expect(makeGenerator(bad, OPTS)).rejects.toThrowError(/typo_section/);
  });

  it("keeps handles independent", async () => {
    const reference = references.get("emccd")!;
    const a = await makeGenerator(reference.configPath, OPTS);
    const b = await makeGenerator(reference.configPath, OPTS);
    await a.dispose();
    const frame = await generateFrame(b, 101, 1);
    expect(imageBytes(frame).equals(reference.frames.get("101:1")!.payload.subarray(8))).toBe(true);
    await b.dispose();
    await expect(generateFrame(a, 101, 1)).rejects.toThrowError(AtomsimError);
  });
});

describe("passthrough reports", () => {
  it("core version matches the package version", async () => {
    const packageJson = JSON.parse(
      await fs.readFile(path.join(__dirname, "..", "package.json"), "utf8"),
    ) as { version: string };
    expect(await coreVersion(OPTS)).toBe(packageJson.version);
  });

  it("psf report exposes the encircled-energy table", async () => {
    const reference = references.get("emccd")!;
    const report = (await psfReport(reference.configPath, OPTS)) as {
      first_dark_ring: { fraction: number };
      encircled_energy: { radius: number; fraction: number }[];
    };
    expect(report.first_dark_ring.fraction).toBeGreaterThan(0.82);
    expect(report.first_dark_ring.fraction).toBeLessThan(0.86);
    expect(report.encircled_energy[0].radius).toBe(0);
  });

  it("fit-gain passthrough returns the tail fit", async () => {
    const dark = structuredClone(EMCCD_DOC);
    dark.experiment.scattering_rate = 0.0;
    (dark.camera.emccd as { resolution: number[]; cic_rate: number }).resolution = [128, 128];
    (dark.camera.emccd as { cic_rate: number }).cic_rate = 0.02;
    const configPath = path.join(workspace, "dark.json");
    await fs.writeFile(configPath, JSON.stringify(dark));
    const outDir = path.join(workspace, "dark-frames");
    await runCli(
      ["generate", "--config", configPath, "--seed", "5", "--count", "30", "--out", outDir],
      "2",
    );
    const gCounts = 300.0 / 4.85;
    const report = (await fitGain(
      outDir,
      { range: [400 + gCounts, 400 + 5 * gCounts], preamp: 4.85 },
      OPTS,
    )) as { electron_gain: number; gain_counts: number };
    expect(report.gain_counts).toBeGreaterThan(0);
    expect(Math.abs(report.electron_gain - 300) / 300).toBeLessThan(0.15);
  });
});

describe("raw decoding", () => {
  it("decodes the documented little-endian layout", () => {
    const payload = Buffer.from([2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0xff, 0xff]);
    const image = decodeRawImage(payload);
    expect(image.width).toBe(2);
    expect(image.height).toBe(1);
    expect(Array.from(image.data)).toStrictEqual([1, 65535]);
  });

  it("rejects truncated payloads", () => {
    expect(() => decodeRawImage(Buffer.from([2, 0, 0, 0]))).toThrowError(AtomsimError);
    expect(() => decodeRawImage(Buffer.from([2, 0, 0, 0, 1, 0, 0, 0, 1]))).toThrowError(
      AtomsimError,
    );
  });
});
