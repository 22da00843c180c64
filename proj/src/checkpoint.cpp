#include "v2lab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace v2lab {

namespace {

constexpr char kMagic[4] = {'V', '2', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& section, const std::string& what) {
    throw std::runtime_error("checkpoint: " + what + " in section '" + section + "'");
}

void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(out, b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(out, b, 8);
}

void write_i64(std::ostream& out, std::int64_t v) { write_u64(out, static_cast<std::uint64_t>(v)); }

void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    write_bytes(out, s.data(), s.size());
}

void read_bytes(std::istream& in, void* p, std::size_t n, const std::string& section) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) fail(section, "truncated file");
}

std::uint32_t read_u32(std::istream& in, const std::string& section) {
    unsigned char b[4];
    read_bytes(in, b, 4, section);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in, const std::string& section) {
    unsigned char b[8];
    read_bytes(in, b, 8, section);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::int64_t read_i64(std::istream& in, const std::string& section) {
    return static_cast<std::int64_t>(read_u64(in, section));
}

double read_f64(std::istream& in, const std::string& section) {
    const std::uint64_t bits = read_u64(in, section);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string read_string(std::istream& in, const std::string& section) {
    const std::uint32_t n = read_u32(in, section);
    if (n > (1u << 20)) fail(section, "implausible string length");
    std::string s(n, '\0');
    if (n > 0) read_bytes(in, s.data(), n, section);
    return s;
}

void write_tensors(std::ostream& out, std::vector<std::pair<std::string, nn::Var>> named) {
    write_u32(out, static_cast<std::uint32_t>(named.size()));
    for (auto& [name, var] : named) {
        write_string(out, name);
        const std::vector<int>& shape = var.shape();
        write_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) write_u32(out, static_cast<std::uint32_t>(d));
        for (double v : var.value()) write_f64(out, v);
    }
}

void read_tensors(std::istream& in, std::vector<std::pair<std::string, nn::Var>> named,
                  const std::string& section) {
    std::map<std::string, nn::Var> by_name;
    for (auto& [name, var] : named) by_name.emplace(name, var);

    const std::uint32_t count = read_u32(in, section);
    if (count != by_name.size()) {
        fail(section, "expected " + std::to_string(by_name.size()) + " tensors, found " +
                          std::to_string(count));
    }
    std::set<std::string> seen;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string name = read_string(in, section);
        auto it = by_name.find(name);
        if (it == by_name.end()) fail(section, "unexpected tensor '" + name + "'");
        if (!seen.insert(name).second) fail(section, "duplicate tensor '" + name + "'");
        const std::uint32_t ndim = read_u32(in, section);
        if (ndim > 8) fail(section, "implausible rank for tensor '" + name + "'");
        std::vector<int> shape(ndim);
        for (std::uint32_t d = 0; d < ndim; ++d)
            shape[d] = static_cast<int>(read_u32(in, section));
        if (shape != it->second.shape()) fail(section, "shape mismatch for tensor '" + name + "'");
        std::vector<double>& dst = it->second.value();
        for (double& v : dst) v = read_f64(in, section);
    }
}

void write_decoder(std::ostream& out, const DecoderParams& params) {
    write_bytes(out, "DEC0", 4);
    const DecoderConfig& c = params.cfg;
    write_u32(out, static_cast<std::uint32_t>(c.dim));
    write_u32(out, static_cast<std::uint32_t>(c.feat_dim));
    write_u32(out, static_cast<std::uint32_t>(c.patch_size));
    write_u32(out, static_cast<std::uint32_t>(c.n_blocks));
    write_u32(out, static_cast<std::uint32_t>(c.head_mid));
    write_u32(out, static_cast<std::uint32_t>(c.ffn_hidden));
    // named_params is non-const by signature; serialization only reads values
    write_tensors(out, const_cast<DecoderParams&>(params).named_params());
}

DecoderParams read_decoder(std::istream& in, const std::string& section) {
    char marker[4];
    read_bytes(in, marker, 4, section);
    if (std::memcmp(marker, "DEC0", 4) != 0) fail(section, "bad decoder marker");
    DecoderConfig c;
    c.dim = static_cast<int>(read_u32(in, section));
    c.feat_dim = static_cast<int>(read_u32(in, section));
    c.patch_size = static_cast<int>(read_u32(in, section));
    c.n_blocks = static_cast<int>(read_u32(in, section));
    c.head_mid = static_cast<int>(read_u32(in, section));
    c.ffn_hidden = static_cast<int>(read_u32(in, section));
    Rng rng(0);
    DecoderParams params = init_decoder(c, rng);
    read_tensors(in, params.named_params(), section);
    return params;
}

void write_matcher(std::ostream& out, const VPMatcherParams& params) {
    write_bytes(out, "VPM0", 4);
    const VPMatcherConfig& c = params.cfg;
    write_u32(out, static_cast<std::uint32_t>(c.dim));
    write_u32(out, static_cast<std::uint32_t>(c.n_layers));
    write_u32(out, static_cast<std::uint32_t>(c.ffn_hidden));
    write_u32(out, static_cast<std::uint32_t>(c.res_hidden));
    write_u32(out, static_cast<std::uint32_t>(c.fusion_hidden));
    write_tensors(out, const_cast<VPMatcherParams&>(params).named_params());
}

VPMatcherParams read_matcher(std::istream& in, const std::string& section) {
    char marker[4];
    read_bytes(in, marker, 4, section);
    if (std::memcmp(marker, "VPM0", 4) != 0) fail(section, "bad matcher marker");
    VPMatcherConfig c;
    c.dim = static_cast<int>(read_u32(in, section));
    c.n_layers = static_cast<int>(read_u32(in, section));
    c.ffn_hidden = static_cast<int>(read_u32(in, section));
    c.res_hidden = static_cast<int>(read_u32(in, section));
    c.fusion_hidden = static_cast<int>(read_u32(in, section));
    Rng rng(0);
    VPMatcherParams params = init_vpmatcher(c, rng);
    read_tensors(in, params.named_params(), section);
    return params;
}

}  // namespace

SavedExpert* Checkpoint::find(ExpertKind kind) {
    for (SavedExpert& e : experts) {
        if (e.expert.kind == kind) return &e;
    }
    return nullptr;
}

const SavedExpert* Checkpoint::find(ExpertKind kind) const {
    for (const SavedExpert& e : experts) {
        if (e.expert.kind == kind) return &e;
    }
    return nullptr;
}

void Checkpoint::upsert(SavedExpert entry) {
    for (SavedExpert& e : experts) {
        if (e.expert.kind == entry.expert.kind) {
            e = std::move(entry);
            return;
        }
    }
    experts.push_back(std::move(entry));
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);

    write_bytes(out, kMagic, 4);
    write_u32(out, kVersion);
    write_u64(out, ck.config_hash);
    write_u64(out, ck.visual_backend_seed);
    write_u64(out, ck.anchor_backend_seed);
    write_u32(out, static_cast<std::uint32_t>(ck.experts.size()));
    for (const SavedExpert& e : ck.experts) {
        write_u32(out, static_cast<std::uint32_t>(e.expert.kind));
        write_i64(out, e.steps_done);
        write_decoder(out, e.expert.decoder);
        write_u32(out, e.expert.matcher.has_value() ? 1u : 0u);
        if (e.expert.matcher.has_value()) write_matcher(out, *e.expert.matcher);
    }
    write_bytes(out, "END0", 4);
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

CheckpointLoadResult load_checkpoint(const std::string& path,
                                     std::uint64_t expected_config_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open for reading: " + path);

    std::string section = "header";
    char magic[4];
    read_bytes(in, magic, 4, section);
    if (std::memcmp(magic, kMagic, 4) != 0) fail(section, "bad magic");
    const std::uint32_t version = read_u32(in, section);
    if (version != kVersion) {
        fail(section, "unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
    }

    CheckpointLoadResult result;
    Checkpoint& ck = result.checkpoint;
    ck.config_hash = read_u64(in, section);
    ck.visual_backend_seed = read_u64(in, section);
    ck.anchor_backend_seed = read_u64(in, section);
    const std::uint32_t n_experts = read_u32(in, section);
    if (n_experts > 16) fail(section, "implausible expert count");

    for (std::uint32_t i = 0; i < n_experts; ++i) {
        section = "expert " + std::to_string(i);
        SavedExpert e;
        const std::uint32_t kind = read_u32(in, section);
        if (kind > 2) fail(section, "bad expert kind tag " + std::to_string(kind));
        e.expert.kind = static_cast<ExpertKind>(kind);
        e.steps_done = read_i64(in, section);
        e.expert.decoder = read_decoder(in, section + " decoder");
        const std::uint32_t has_matcher = read_u32(in, section);
        if (has_matcher > 1) fail(section, "bad matcher flag");
        if (has_matcher == 1) e.expert.matcher = read_matcher(in, section + " matcher");
        ck.experts.push_back(std::move(e));
    }

    section = "trailer";
    char trailer[4];
    read_bytes(in, trailer, 4, section);
    if (std::memcmp(trailer, "END0", 4) != 0) fail(section, "bad trailer");
    in.peek();
    if (!in.eof()) fail(section, "trailing bytes after trailer");

    result.config_hash_mismatch =
        expected_config_hash != 0 && expected_config_hash != ck.config_hash;
    return result;
}

}  // namespace v2lab
