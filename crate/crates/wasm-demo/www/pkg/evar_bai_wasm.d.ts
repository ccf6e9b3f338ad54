/* tslint:disable */
/* eslint-disable */

/**
 * EVaR over `points` levels spread on `(0, 1)`.
 */
export function evar_curve(dist_json: string, points: number): string;

/**
 * `KL_inf^U` and `KL_inf^L` of a law on a uniform grid of thresholds.
 */
export function projection_profile(dist_json: string, alpha: number, points: number): string;

/**
 * Oracle proportions of `instance_json` and one Track-and-Stop run with
 * the given seed, capped at a fixed demo horizon.
 */
export function track_and_stop(instance_json: string, alpha: number, delta: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly evar_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly projection_profile: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly track_and_stop: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
