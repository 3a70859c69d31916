/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_slice_free: (a: number, b: number) => void;
export const perturbation_alignment: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const slice_offsets: (a: number) => [number, number];
export const slice_sgd: (a: number) => [number, number];
export const slice_zosam: (a: number) => [number, number];
export const trained_slices: (a: number, b: number, c: number, d: number) => [number, number, number];
export const variance_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
