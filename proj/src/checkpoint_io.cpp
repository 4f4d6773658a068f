#include "pam/checkpoint_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "pam/util.hpp"

namespace pam {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'M', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void put_ints(std::ostream& out, const std::vector<int>& v) {
    put_u32(out, static_cast<std::uint32_t>(v.size()));
    for (int x : v) put_u32(out, static_cast<std::uint32_t>(x));
}

std::vector<int> get_ints(std::istream& in) {
    std::uint32_t n = get_u32(in);
    std::vector<int> v(n);
    for (auto& x : v) x = static_cast<int>(get_u32(in));
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    atomic_write(path, [&ck](std::ostream& out) {
        out.write(kMagic, 8);
        put_u32(out, ck.version);
        const SupernetConfig& c = ck.config;
        put_u32(out, static_cast<std::uint32_t>(c.resolution));
        put_u32(out, static_cast<std::uint32_t>(c.input_channels));
        put_ints(out, c.stem_channels);
        put_u32(out, static_cast<std::uint32_t>(c.stage_count));
        put_u32(out, static_cast<std::uint32_t>(c.stage_channels));
        put_u32(out, static_cast<std::uint32_t>(c.depthwise_kernel));
        put_u32(out, static_cast<std::uint32_t>(c.expansion_factor));
        put_u32(out, static_cast<std::uint32_t>(c.connect_reduction));
        put_ints(out, c.pyramid_scales);
        put_u32(out, static_cast<std::uint32_t>(c.embedding_buckets));
        put_u32(out, static_cast<std::uint32_t>(c.embedding_dim));
        put_u32(out, static_cast<std::uint32_t>(c.mlp_hidden));
        put_u64(out, c.hash());
        put_u32(out, static_cast<std::uint32_t>(ck.stage));
        put_u32(out, static_cast<std::uint32_t>(ck.epoch));
        put_u32(out, static_cast<std::uint32_t>(ck.params.size()));
        for (const auto& [name, t] : ck.params) {
            put_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            put_ints(out, t.dims());
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(t.numel() * sizeof(double)));
        }
    });
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a PAM checkpoint: " + path);
    Checkpoint ck;
    ck.version = get_u32(in);
    if (ck.version != 1) throw std::runtime_error("unsupported checkpoint version");
    SupernetConfig& c = ck.config;
    c.resolution = static_cast<int>(get_u32(in));
    c.input_channels = static_cast<int>(get_u32(in));
    c.stem_channels = get_ints(in);
    c.stage_count = static_cast<int>(get_u32(in));
    c.stage_channels = static_cast<int>(get_u32(in));
    c.depthwise_kernel = static_cast<int>(get_u32(in));
    c.expansion_factor = static_cast<int>(get_u32(in));
    c.connect_reduction = static_cast<int>(get_u32(in));
    c.pyramid_scales = get_ints(in);
    c.embedding_buckets = static_cast<int>(get_u32(in));
    c.embedding_dim = static_cast<int>(get_u32(in));
    c.mlp_hidden = static_cast<int>(get_u32(in));
    std::uint64_t stored_hash = get_u64(in);
    if (stored_hash != c.hash()) throw std::runtime_error("checkpoint config hash mismatch: " + path);
    ck.stage = static_cast<int>(get_u32(in));
    ck.epoch = static_cast<int>(get_u32(in));
    std::uint32_t n = get_u32(in);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::uint32_t len = get_u32(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        std::vector<int> dims = get_ints(in);
        Tensor t(dims);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        for (std::int64_t k = 0; k < t.numel(); ++k)
            if (!std::isfinite(t[k]))
                throw std::runtime_error("checkpoint contains non-finite parameter: " + name);
        ck.params.emplace(std::move(name), std::move(t));
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return ck;
}

}  // namespace pam
