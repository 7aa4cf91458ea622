#include "s2r/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "s2r/common.hpp"

namespace s2r {

namespace {

constexpr char kMagic[4] = {'S', '2', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint truncated: " + path);
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& path) {
    auto n = get<std::uint32_t>(is, path);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("checkpoint truncated: " + path);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainCheckpoint& ckpt) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write checkpoint: " + tmp);

        os.write(kMagic, 4);
        put<std::uint32_t>(os, kVersion);
        put<std::uint64_t>(os, ckpt.step);
        put<std::uint64_t>(os, ckpt.seed);
        put<std::int64_t>(os, ckpt.opt_steps);
        put_string(os, ckpt.pca_path);
        put<std::uint64_t>(os, ckpt.pca_hash);

        put<std::uint64_t>(os, ckpt.arrays.size());
        std::uint64_t offset = 0;
        for (const auto& [name, arr] : ckpt.arrays) {  // std::map: sorted, stable
            put_string(os, name);
            put<std::uint8_t>(os, arr.trainable ? 1 : 0);
            put<std::uint8_t>(os, 0);  // dtype fp64
            put<std::uint32_t>(os, static_cast<std::uint32_t>(arr.shape.size()));
            for (auto d : arr.shape) put<std::int64_t>(os, d);
            put<std::uint64_t>(os, offset);
            put<std::uint64_t>(os, arr.data.size());
            offset += arr.data.size();
        }
        put<std::uint64_t>(os, offset);
        for (const auto& [name, arr] : ckpt.arrays) {
            (void)name;
            os.write(reinterpret_cast<const char*>(arr.data.data()),
                     static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
        }
        if (!os) throw DataError("checkpoint write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

TrainCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a checkpoint file: " + path);
    auto version = get<std::uint32_t>(is, path);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);

    TrainCheckpoint ckpt;
    ckpt.step = get<std::uint64_t>(is, path);
    ckpt.seed = get<std::uint64_t>(is, path);
    ckpt.opt_steps = get<std::int64_t>(is, path);
    ckpt.pca_path = get_string(is, path);
    ckpt.pca_hash = get<std::uint64_t>(is, path);

    auto n_arrays = get<std::uint64_t>(is, path);
    struct Entry {
        std::string name;
        std::uint64_t offset, count;
    };
    std::vector<Entry> entries;
    entries.reserve(n_arrays);
    for (std::uint64_t i = 0; i < n_arrays; ++i) {
        Entry e;
        e.name = get_string(is, path);
        ArchiveArray arr;
        arr.trainable = get<std::uint8_t>(is, path) != 0;
        auto dtype = get<std::uint8_t>(is, path);
        if (dtype != 0) throw DataError("unsupported dtype in checkpoint: " + path);
        auto rank = get<std::uint32_t>(is, path);
        arr.shape.resize(rank);
        std::int64_t numel = 1;
        for (auto& d : arr.shape) {
            d = get<std::int64_t>(is, path);
            numel *= d;
        }
        e.offset = get<std::uint64_t>(is, path);
        e.count = get<std::uint64_t>(is, path);
        if (e.count != static_cast<std::uint64_t>(numel))
            throw DataError("array size disagrees with shape for '" + e.name + "': " + path);
        ckpt.arrays.emplace(e.name, std::move(arr));
        entries.push_back(std::move(e));
    }
    auto payload_count = get<std::uint64_t>(is, path);
    std::vector<double> payload(payload_count);
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload_count * sizeof(double)));
    if (!is) throw DataError("checkpoint truncated: " + path);

    for (const auto& e : entries) {
        if (e.offset + e.count > payload_count)
            throw DataError("array '" + e.name + "' points past the payload: " + path);
        auto& arr = ckpt.arrays.at(e.name);
        arr.data.assign(payload.begin() + static_cast<std::ptrdiff_t>(e.offset),
                        payload.begin() + static_cast<std::ptrdiff_t>(e.offset + e.count));
    }
    return ckpt;
}

TrainCheckpoint snapshot(std::uint64_t step, std::uint64_t seed, const ParamStore& params,
                         const Adam* opt, const std::string& pca_path, std::uint64_t pca_hash) {
    TrainCheckpoint ckpt;
    ckpt.step = step;
    ckpt.seed = seed;
    ckpt.pca_path = pca_path;
    ckpt.pca_hash = pca_hash;
    for (const auto& p : params.all()) {
        ArchiveArray arr;
        arr.shape = p->val.shape;
        arr.data = p->val.data;
        arr.trainable = p->requires_grad;
        ckpt.arrays.emplace(p->name, std::move(arr));
    }
    if (opt) {
        ckpt.opt_steps = opt->step_count();
        const auto& ps = opt->params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            ArchiveArray m{ps[i]->val.shape, opt->m_state()[i].data, false};
            ArchiveArray v{ps[i]->val.shape, opt->v_state()[i].data, false};
            ckpt.arrays.emplace("opt.m." + ps[i]->name, std::move(m));
            ckpt.arrays.emplace("opt.v." + ps[i]->name, std::move(v));
        }
    }
    return ckpt;
}

void restore(const TrainCheckpoint& ckpt, ParamStore& params, Adam* opt) {
    for (const auto& p : params.all()) {
        auto it = ckpt.arrays.find(p->name);
        if (it == ckpt.arrays.end())
            throw DataError("checkpoint is missing parameter '" + p->name + "'");
        const ArchiveArray& arr = it->second;
        if (arr.shape != p->val.shape)
            throw DataError("checkpoint shape mismatch for '" + p->name + "': stored " +
                            Tensor{arr.shape}.shape_str() + ", model expects " +
                            p->val.shape_str());
        p->val.data = arr.data;
        p->requires_grad = arr.trainable;
    }
    if (opt) {
        const auto& ps = opt->params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            for (const char* kind : {"m", "v"}) {
                const std::string key = std::string("opt.") + kind + "." + ps[i]->name;
                auto it = ckpt.arrays.find(key);
                if (it == ckpt.arrays.end())
                    throw DataError("checkpoint is missing optimizer state '" + key + "'");
                if (it->second.data.size() != static_cast<std::size_t>(ps[i]->val.numel()))
                    throw DataError("optimizer state size mismatch for '" + key + "'");
                auto& slot = (kind[0] == 'm') ? opt->m_state()[i] : opt->v_state()[i];
                slot.data = it->second.data;
            }
        }
        opt->set_step_count(ckpt.opt_steps);
    }
}

std::uint64_t file_content_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open file for hashing: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
        h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
    return h;
}

}  // namespace s2r
