#include "kvx2l/kvstore.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace kvx2l {

namespace fs = std::filesystem;

uint64_t kv_payload_bytes(const CompressedKV& kv, const EngineConfig& config) {
    return static_cast<uint64_t>(kv.kv.size()) * static_cast<uint64_t>(config.layers) * config.heads *
           config.head_dim * 2 * sizeof(float);
}

uint64_t kv_checksum(const CompressedKV& kv) {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& pair : kv.kv) {
        h = fnv1a64(&pair.position, sizeof(pair.position), h);
        h = fnv1a64(pair.key.data(), pair.key.size() * sizeof(float), h);
        h = fnv1a64(pair.value.data(), pair.value.size() * sizeof(float), h);
    }
    return h;
}

std::vector<uint8_t> serialize_compressed_kv(const CompressedKV& kv, const EngineConfig& config) {
    const size_t stride = static_cast<size_t>(config.layers) * config.embed_dim;
    std::vector<uint8_t> out;
    out.reserve(64 + kv.kv.size() * (8 + stride * 8));
    out.insert(out.end(), kCacheMagic, kCacheMagic + 4);
    put_u32(out, kCacheVersion);
    put_u64(out, config.hash());
    put_u32(out, static_cast<uint32_t>(kv.chunk_index));
    put_u8(out, static_cast<uint8_t>(level_char(kv.level)));
    put_u32(out, static_cast<uint32_t>(kv.ratio));
    put_u32(out, static_cast<uint32_t>(kv.source_width));
    put_u32(out, static_cast<uint32_t>(kv.kv.size()));
    put_u32(out, static_cast<uint32_t>(config.layers));
    put_u32(out, static_cast<uint32_t>(config.heads));
    put_u32(out, static_cast<uint32_t>(config.head_dim));
    for (const auto& pair : kv.kv) put_i64(out, pair.position);
    for (const auto& pair : kv.kv) {
        if (pair.key.size() != stride || pair.value.size() != stride)
            throw DimensionError("serialize: KV tensor shape does not match engine config");
        put_f32_array(out, pair.key.data(), stride);
    }
    for (const auto& pair : kv.kv) put_f32_array(out, pair.value.data(), stride);
    return out;
}

CompressedKV deserialize_compressed_kv(std::span<const uint8_t> bytes, const EngineConfig& config) {
    ByteReader r{bytes.data(), bytes.size()};
    r.need(4);
    if (std::memcmp(bytes.data(), kCacheMagic, 4) != 0) throw IntegrityError("cache record: bad magic");
    r.pos = 4;
    if (r.u32() != kCacheVersion) throw IntegrityError("cache record: unsupported version");
    if (r.u64() != config.hash()) throw IntegrityError("cache record: engine config hash mismatch");

    CompressedKV kv;
    kv.chunk_index = static_cast<int>(r.u32());
    const uint8_t lvl = r.u8();
    if (lvl != 'L' && lvl != 'H') throw IntegrityError("cache record: bad level tag");
    kv.level = lvl == 'L' ? Level::Low : Level::High;
    kv.ratio = static_cast<int>(r.u32());
    kv.source_width = static_cast<int>(r.u32());
    const uint32_t entries = r.u32();
    const uint32_t layers = r.u32();
    const uint32_t heads = r.u32();
    const uint32_t head_dim = r.u32();
    if (layers != static_cast<uint32_t>(config.layers) || heads != static_cast<uint32_t>(config.heads) ||
        head_dim != static_cast<uint32_t>(config.head_dim))
        throw IntegrityError("cache record: tensor shape does not match engine config");

    const size_t stride = static_cast<size_t>(layers) * heads * head_dim;
    kv.kv.resize(entries);
    for (auto& pair : kv.kv) pair.position = r.i64();
    for (auto& pair : kv.kv) {
        pair.key.resize(stride);
        r.f32_array(pair.key.data(), stride);
    }
    for (auto& pair : kv.kv) {
        pair.value.resize(stride);
        r.f32_array(pair.value.data(), stride);
    }
    if (r.pos != bytes.size()) throw IntegrityError("cache record: trailing bytes");
    return kv;
}

ColdStore::ColdStore(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cold store: cannot create directory " + dir_.string());
}

fs::path ColdStore::record_path(int chunk_index, Level level) const {
    char name[48];
    std::snprintf(name, sizeof(name), "chunk_%06d_%c.kvx", chunk_index, level_char(level));
    return dir_ / name;
}

CacheHandle ColdStore::put(const CompressedKV& kv, const EngineConfig& config) {
    std::vector<uint8_t> bytes = serialize_compressed_kv(kv, config);
    const fs::path final_path = record_path(kv.chunk_index, kv.level);
    const fs::path tmp_path = final_path.string() + ".tmp";
    {
        std::ofstream f(tmp_path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cold store: cannot open " + tmp_path.string() + " for chunk " +
                              std::to_string(kv.chunk_index));
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("cold store: short write for chunk " + std::to_string(kv.chunk_index));
    }
    std::error_code ec;
    fs::rename(tmp_path, final_path, ec);
    if (ec) throw IoError("cold store: rename failed for chunk " + std::to_string(kv.chunk_index));

    CacheHandle h;
    h.chunk_index = kv.chunk_index;
    h.level = kv.level;
    h.payload_bytes = kv_payload_bytes(kv, config);
    h.file_bytes = bytes.size();
    h.checksum = kv_checksum(kv);
    h.location = CacheLocation::Cold;
    return h;
}

namespace {

std::vector<uint8_t> read_file_mmap(const fs::path& path) {
    int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw IoError("cold store: cannot open " + path.string());
    struct stat st {};
    if (::fstat(fd, &st) != 0 || st.st_size < 0) {
        ::close(fd);
        throw IoError("cold store: cannot stat " + path.string());
    }
    const size_t size = static_cast<size_t>(st.st_size);
    std::vector<uint8_t> out(size);
    if (size > 0) {
        void* mapped = ::mmap(nullptr, size, PROT_READ, MAP_PRIVATE, fd, 0);
        if (mapped == MAP_FAILED) {
            // fall back to a plain read
            std::ifstream f(path, std::ios::binary);
            if (!f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size))) {
                ::close(fd);
                throw IoError("cold store: read failed for " + path.string());
            }
        } else {
            std::memcpy(out.data(), mapped, size);
            ::munmap(mapped, size);
        }
    }
    ::close(fd);
    return out;
}

}  // namespace

CompressedKV ColdStore::get(int chunk_index, Level level, const EngineConfig& config) const {
    const fs::path path = record_path(chunk_index, level);
    if (!fs::exists(path))
        throw IntegrityError("cold store: missing record for chunk " + std::to_string(chunk_index) + " level " +
                             level_char(level));
    return deserialize_compressed_kv(read_file_mmap(path), config);
}

bool ColdStore::contains(int chunk_index, Level level) const { return fs::exists(record_path(chunk_index, level)); }

std::vector<CacheHandle> ColdStore::scan(const EngineConfig& config) const {
    std::vector<CacheHandle> out;
    for (const auto& entry : fs::directory_iterator(dir_)) {
        if (entry.path().extension() != ".kvx") continue;
        CompressedKV kv = deserialize_compressed_kv(read_file_mmap(entry.path()), config);
        CacheHandle h;
        h.chunk_index = kv.chunk_index;
        h.level = kv.level;
        h.payload_bytes = kv_payload_bytes(kv, config);
        h.file_bytes = fs::file_size(entry.path());
        h.checksum = kv_checksum(kv);
        h.location = CacheLocation::Cold;
        out.push_back(h);
    }
    std::sort(out.begin(), out.end(), [](const CacheHandle& a, const CacheHandle& b) {
        return a.chunk_index != b.chunk_index ? a.chunk_index < b.chunk_index
                                              : static_cast<int>(a.level) < static_cast<int>(b.level);
    });
    return out;
}

void HotStore::insert(CompressedKV kv) { resident_.push_back(std::move(kv)); }

int64_t HotStore::total_entries() const {
    int64_t n = 0;
    for (const auto& kv : resident_) n += static_cast<int64_t>(kv.kv.size());
    return n;
}

uint64_t HotStore::total_payload_bytes(const EngineConfig& config) const {
    uint64_t n = 0;
    for (const auto& kv : resident_) n += kv_payload_bytes(kv, config);
    return n;
}

std::vector<CacheHandle> offload(std::vector<CompressedKV>& kvs, ColdStore& store, const EngineConfig& config) {
    std::vector<CacheHandle> handles;
    handles.reserve(kvs.size());
    for (const auto& kv : kvs) handles.push_back(store.put(kv, config));
    kvs.clear();
    return handles;
}

HotStore reload(const ReloadPlan& plan, const ColdStore& store, const EngineConfig& config) {
    HotStore hot;
    for (int chunk : plan.selected) hot.insert(store.get(chunk, Level::Low, config));
    for (int chunk : plan.complement) hot.insert(store.get(chunk, Level::High, config));
    return hot;
}

ReductionReport predict_reduction(std::span<const int> widths, int alpha_low, int alpha_high, int k,
                                  const std::vector<int>* selected) {
    const int m = static_cast<int>(widths.size());
    if (k > m) throw PreconditionError("predict_reduction: k exceeds chunk count");
    if (alpha_low < 1 || alpha_high < 1) throw ConfigError("predict_reduction: ratios must be >= 1");

    std::vector<int> chosen;
    if (selected) {
        chosen = *selected;
    } else {
        // worst case: the k widest chunks keep low-compression entries
        std::vector<int> order(static_cast<size_t>(m));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return widths[a] > widths[b]; });
        chosen.assign(order.begin(), order.begin() + k);
        std::sort(chosen.begin(), chosen.end());
    }
    std::vector<char> is_low(static_cast<size_t>(m), 0);
    for (int c : chosen) {
        if (c < 0 || c >= m) throw PreconditionError("predict_reduction: selected chunk out of range");
        is_low[static_cast<size_t>(c)] = 1;
    }

    auto entries_for = [](int width, int alpha) {
        return static_cast<int64_t>(std::max(1, (width + alpha - 1) / alpha));
    };

    ReductionReport rep;
    for (int i = 0; i < m; ++i) {
        const int w = widths[static_cast<size_t>(i)];
        ReductionReport::ChunkLine line;
        line.chunk_index = i;
        line.level = is_low[static_cast<size_t>(i)] ? Level::Low : Level::High;
        line.width = w;
        line.entries = entries_for(w, is_low[static_cast<size_t>(i)] ? alpha_low : alpha_high);
        rep.per_chunk.push_back(line);
        rep.baseline_entries += w;
        rep.retained_entries += line.entries;
    }
    if (rep.baseline_entries <= 0) throw PreconditionError("predict_reduction: empty width list");
    rep.retained_fraction = static_cast<double>(rep.retained_entries) / static_cast<double>(rep.baseline_entries);
    rep.reduction_pct = 100.0 * (1.0 - rep.retained_fraction);
    return rep;
}

}  // namespace kvx2l
