/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const attention_explorer: (a: bigint, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
export const fusion: (a: bigint, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const skeleton: (a: number, b: bigint, c: bigint, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
