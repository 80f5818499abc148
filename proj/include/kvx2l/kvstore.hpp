#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvx2l/compressor.hpp"
#include "kvx2l/plan.hpp"

namespace kvx2l {

enum class CacheLocation { Hot, Cold };

struct CacheHandle {
    int chunk_index = 0;
    Level level = Level::Low;
    uint64_t payload_bytes = 0;  // entries * layers * heads * head_dim * 2 tensors * 4 bytes
    uint64_t file_bytes = 0;     // payload plus header and position list
    uint64_t checksum = 0;       // over tensor bytes and positions
    CacheLocation location = CacheLocation::Cold;
};

// Cache file layout (all little-endian):
//   magic "VX2L" | u32 version | u64 engine-config hash
//   u32 chunk_index | u8 level ('L'/'H') | u32 ratio | u32 source_width
//   u32 entries | u32 layers | u32 heads | u32 head_dim
//   i64 position[entries]
//   f32 K[entries][layers*heads*head_dim]
//   f32 V[entries][layers*heads*head_dim]
inline constexpr char kCacheMagic[4] = {'V', 'X', '2', 'L'};
inline constexpr uint32_t kCacheVersion = 1;

std::vector<uint8_t> serialize_compressed_kv(const CompressedKV& kv, const EngineConfig& config);
CompressedKV deserialize_compressed_kv(std::span<const uint8_t> bytes, const EngineConfig& config);

uint64_t kv_checksum(const CompressedKV& kv);
uint64_t kv_payload_bytes(const CompressedKV& kv, const EngineConfig& config);

// Offload target: one file per (chunk, level) record under a directory.
// Writes go through a temp file and rename, reads are memory-mapped.
class ColdStore {
  public:
    explicit ColdStore(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }

    CacheHandle put(const CompressedKV& kv, const EngineConfig& config);
    CompressedKV get(int chunk_index, Level level, const EngineConfig& config) const;
    bool contains(int chunk_index, Level level) const;
    std::vector<CacheHandle> scan(const EngineConfig& config) const;

    std::filesystem::path record_path(int chunk_index, Level level) const;

  private:
    std::filesystem::path dir_;
};

// Decode-visible cache owned by a single session.
class HotStore {
  public:
    void insert(CompressedKV kv);
    void clear() { resident_.clear(); }

    const std::vector<CompressedKV>& resident() const { return resident_; }
    std::vector<CompressedKV> take() { return std::move(resident_); }

    int64_t total_entries() const;
    uint64_t total_payload_bytes(const EngineConfig& config) const;

  private:
    std::vector<CompressedKV> resident_;
};

// Serializes every record to the cold store and returns their handles; the
// source list is emptied (the hot side no longer owns the tensors).
std::vector<CacheHandle> offload(std::vector<CompressedKV>& kvs, ColdStore& store, const EngineConfig& config);

// Populates a hot store with exactly the plan: low-level records for the
// selected chunks, high-level records for the complement.
HotStore reload(const ReloadPlan& plan, const ColdStore& store, const EngineConfig& config);

struct ReductionReport {
    struct ChunkLine {
        int chunk_index = 0;
        Level level = Level::Low;
        int width = 0;
        int64_t entries = 0;
    };
    double retained_fraction = 1.0;
    double reduction_pct = 0.0;
    int64_t baseline_entries = 0;  // uncompressed KV count n
    int64_t retained_entries = 0;
    std::vector<ChunkLine> per_chunk;
};

// Analytic cache-size predictor. With `selected` unset, the k widest chunks
// are assumed selected (the worst case for retention). Entry counts use the
// same ceil-with-floor-one rule as the layouts.
ReductionReport predict_reduction(std::span<const int> widths, int alpha_low, int alpha_high, int k,
                                  const std::vector<int>* selected = nullptr);

}  // namespace kvx2l
