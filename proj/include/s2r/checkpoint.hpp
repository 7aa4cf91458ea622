#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s2r/nn.hpp"

namespace s2r {

// One named fp64 array.  `trainable` records the parameter-group role at save
// time (frozen denoiser vs. learned branch/aligner) and is reapplied on load;
// group membership itself is carried by the name prefix ("dit.", "ctrl.",
// "aligner.", "opt.m.", "opt.v.").
struct ArchiveArray {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    bool trainable = true;
};

// A full training snapshot: parameters, optimizer moments, the step counter,
// the master seed (per-step rng state is a pure function of seed and step, so
// this pair restores the draw stream exactly), and the identity of the PCA
// basis the run was conditioned on.
struct TrainCheckpoint {
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::int64_t opt_steps = 0;
    std::string pca_path;        // empty for unconditional (backbone) phases
    std::uint64_t pca_hash = 0;  // fnv1a over the basis file bytes
    std::map<std::string, ArchiveArray> arrays;
};

// S2RC v1 byte layout, all fields little-endian:
//   magic "S2RC" | u32 version=1 | u64 step | u64 seed | i64 opt_steps
//   u32 pca_path_len | pca_path bytes | u64 pca_hash
//   u64 n_arrays, then per array (names sorted):
//     u32 name_len | name bytes | u8 trainable | u8 dtype (0 = fp64)
//     u32 rank | i64 dims[rank] | u64 offset (element index) | u64 count
//   u64 payload_count | payload_count raw fp64 values
// The write goes to "<path>.tmp" and is renamed into place, so readers never
// see a half-written archive.
void save_checkpoint(const std::string& path, const TrainCheckpoint& ckpt);
TrainCheckpoint load_checkpoint(const std::string& path);

// Collects every parameter under its name; with an optimizer, its moments are
// stored as "opt.m.<param>" / "opt.v.<param>" and its step counter alongside.
TrainCheckpoint snapshot(std::uint64_t step, std::uint64_t seed, const ParamStore& params,
                         const Adam* opt, const std::string& pca_path, std::uint64_t pca_hash);

// Writes values and trainable flags back into an already-constructed store by
// name.  Every store parameter must appear in the archive with a matching
// shape (DataError otherwise); archive entries with no counterpart are
// ignored, which is what lets a backbone-only archive load into the denoiser
// before the branch and aligner exist.  With `opt`, every optimizer parameter
// additionally needs its m/v arrays, and the Adam step counter is restored.
void restore(const TrainCheckpoint& ckpt, ParamStore& params, Adam* opt);

// fnv1a over the raw file bytes; DataError if the file cannot be read.
std::uint64_t file_content_hash(const std::string& path);

}  // namespace s2r
