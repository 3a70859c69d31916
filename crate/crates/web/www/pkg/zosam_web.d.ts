/* tslint:disable */
/* eslint-disable */

export class Slice {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly offsets: Float64Array;
    readonly sgd: Float64Array;
    readonly zosam: Float64Array;
}

/**
 * Mean cosine between the zero-order and exact SAM perturbations on
 * `diag(1..=dim)`, for each direction count in `ms`.
 */
export function perturbation_alignment(dim: number, ms: Uint32Array, trials: number): Float64Array;

/**
 * Trains a sparse 2-16-2 network with SGD and with ZO-SAM, then slices
 * the training loss along one random direction through each endpoint.
 */
export function trained_slices(alpha: number, epochs: number, radius: number, seed: number): Slice;

/**
 * Windowed gradient variance during sparse training, flattened as
 * `[step0, var0, step1, var1, ...]`.
 */
export function variance_curve(optimizer: string, alpha: number, epochs: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_slice_free: (a: number, b: number) => void;
    readonly perturbation_alignment: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly slice_offsets: (a: number) => [number, number];
    readonly slice_sgd: (a: number) => [number, number];
    readonly slice_zosam: (a: number) => [number, number];
    readonly trained_slices: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly variance_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
