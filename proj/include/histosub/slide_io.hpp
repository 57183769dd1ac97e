#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "histosub/model.hpp"

namespace histosub {

/// One row of manifest.tsv: slide_id, directory, label, cohort, disease_status.
struct ManifestEntry {
    std::string slide_id;
    std::filesystem::path directory;  // resolved against the manifest's folder
    std::optional<int> label;         // BASAL = 1, CLASSICAL = 0, NA = absent
    std::string cohort;
    std::string disease_status;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

enum class BundleFormat { Tsv, Packed };

/**
 * Slide bundle directory.
 *
 * TSV: patches.tsv (patch_id, gx, gy, embedding...) and cells.tsv
 * (cell_id, x, y, class, embedding...). Packed: patches.bin / cells.bin,
 * little-endian with a small header. Embeddings are stored as 32-bit floats
 * in both formats, so either representation loads to identical values.
 * Reading prefers the TSV files when both are present.
 */
SlideBag read_slide_bundle(const std::filesystem::path& dir, const std::string& slide_id);
void write_slide_bundle(const SlideBag& bag, const std::filesystem::path& dir, BundleFormat format);

/// Loads every manifest slide, attaching the manifest label.
std::vector<SlideBag> load_slides(const std::vector<ManifestEntry>& manifest);

/**
 * Checkpoint: "HSCK" magic, u32 version, u32 patch_dim, cell_dim, att_dim,
 * mode, lambda_mode, pos_enc, u64 seed, u64 parameter count, then the
 * parameters as little-endian float32.
 */
void save_checkpoint(const ModelParams& params, std::uint64_t seed, const std::filesystem::path& path);

struct Checkpoint {
    ModelParams params;
    std::uint64_t seed;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the file bytes.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace histosub
