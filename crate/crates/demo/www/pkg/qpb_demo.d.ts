/* tslint:disable */
/* eslint-disable */

/**
 * Exact fidelity of `protocol` on straight paths of every admissible length
 * up to `max_len`, from the density-matrix oracle.
 *
 * Returns `{protocol, threshold, points: [{n, swap_distance, fidelity, closed_form}]}`.
 * `closed_form` is only filled for transmit under pure two-qubit noise.
 */
export function decay_curve(protocol: string, p1: number, p2: number, readout: number, max_len: number): string;

/**
 * Paths of one stage on a rectangle or pair, plus an SVG of the chip with the
 * sub-chip shaded and path `highlight` (wrapped modulo the count) drawn on top.
 *
 * Returns `{topology, subchip, stage, count, index, path, swap_distance, svg}`.
 */
export function explore_paths(topology: string, rects: string, stage: string, protocol: string, highlight: number): string;

/**
 * Chip score from per-rectangle minimum fidelities.
 *
 * `mins` is a comma or whitespace separated list; a `-` or `x` marks a
 * rectangle that never reached capability. Rectangles below `threshold`
 * count as not capable. `n0` is the chip's rectangle count (0 means the
 * list length).
 *
 * Returns `{n0, capable, avg_min, score, per_rect}`.
 */
export function score_chip(mins: string, threshold: number, n0: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly decay_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly explore_paths: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number];
    readonly score_chip: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
