/* tslint:disable */
/* eslint-disable */

/**
 * Attention of one target row over `similarity.len()` sources, the
 * β-scaled reference, the gate and the complementary representation.
 */
export function attention_explorer(seed: bigint, d_r: number, similarity: Float64Array, beta: Float64Array, keep: Uint8Array, use_beta: boolean, identity_projections: boolean): string;

/**
 * Accuracy of each stream alone and of their weighted late fusion.
 */
export function fusion(seed: bigint, samples: number, classes: number, signal: Float64Array, weights: Float64Array): string;

/**
 * One synthetic sample of `class` in joint, bone and hybrid form, plus the
 * joint form resampled to `resample_to` frames.
 */
export function skeleton(classes: number, class_seed: bigint, seed: bigint, _class: number, resample_to: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly attention_explorer: (a: bigint, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
    readonly fusion: (a: bigint, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly skeleton: (a: number, b: bigint, c: bigint, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
