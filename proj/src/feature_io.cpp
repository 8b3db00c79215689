#include "dcp/feature_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dcp/error.hpp"

namespace dcp {

namespace {

constexpr std::uint64_t P1 = 0x9E3779B185EBCA87ULL;
constexpr std::uint64_t P2 = 0xC2B2AE3D27D4EB4FULL;
constexpr std::uint64_t P3 = 0x165667B19E3779F9ULL;
constexpr std::uint64_t P4 = 0x85EBCA77C2B2AE63ULL;
constexpr std::uint64_t P5 = 0x27D4EB2F165667C5ULL;

std::uint64_t load64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint32_t load32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) | (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t round(std::uint64_t acc, std::uint64_t input) {
    acc += input * P2;
    acc = std::rotl(acc, 31);
    return acc * P1;
}

std::uint64_t merge(std::uint64_t acc, std::uint64_t val) {
    acc ^= round(0, val);
    return acc * P1 + P4;
}

constexpr char kMagic[4] = {'D', 'C', 'P', 'F'};

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    /// f64 values followed by their checksum.
    void payload(std::span<const double> data) {
        const std::size_t start = out_.size();
        for (double d : data) u64(std::bit_cast<std::uint64_t>(d));
        u64(xxhash64(std::span<const std::uint8_t>(out_.data() + start, out_.size() - start)));
    }
    void dims(const Shape& d) {
        u32(static_cast<std::uint32_t>(d.size()));
        for (auto x : d) u32(static_cast<std::uint32_t>(x));
    }
    void record(const Tensor& t) {
        dims(t.dims());
        payload(t.data());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::size_t offset() const { return pos_; }

    void need(std::size_t n, const char* what) {
        if (b_.size() - pos_ < n)
            throw FormatError(std::string("truncated ") + what + ": expected " + std::to_string(n) + " bytes, got " +
                                  std::to_string(b_.size() - pos_),
                              pos_);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return b_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const auto v = load32(b_.data() + pos_);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        const auto v = load64(b_.data() + pos_);
        pos_ += 8;
        return v;
    }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    Shape dims(const char* what) {
        const std::size_t at = pos_;
        const std::uint32_t rank = u32(what);
        if (rank > 8) throw FormatError(std::string(what) + ": implausible rank " + std::to_string(rank), at);
        Shape d(rank);
        for (auto& x : d) x = u32(what);
        return d;
    }
    Tensor payload(Shape dims, const char* what) {
        const std::size_t n = shape_size(dims);
        const std::size_t start = pos_;
        const std::size_t remaining = b_.size() - pos_;
        if (n > remaining / 8 || remaining - n * 8 < 8)
            throw FormatError(std::string("truncated ") + what + " payload: expected " + std::to_string(n * 8 + 8) +
                                  " bytes, got " + std::to_string(remaining),
                              pos_);
        std::vector<double> data(n);
        for (auto& d : data) {
            d = std::bit_cast<double>(load64(b_.data() + pos_));
            pos_ += 8;
        }
        const std::uint64_t expected = xxhash64(b_.subspan(start, n * 8));
        const std::uint64_t stored = u64(what);
        if (stored != expected) throw FormatError(std::string(what) + ": payload checksum mismatch", pos_ - 8);
        return Tensor(std::move(dims), std::move(data));
    }
    Tensor record(const char* what) { return payload(dims(what), what); }
    void finish() {
        if (pos_ != b_.size())
            throw FormatError("unexpected trailing data: " + std::to_string(b_.size() - pos_) + " bytes", pos_);
    }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

void write_header(Writer& w, FileKind kind, const Tensor& primary) {
    w.bytes(kMagic, 4);
    w.u32(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(kind));
    w.record(primary);
}

FileKind read_header(Reader& r) {
    r.need(4, "magic");
    // Magic is checked byte-wise so a bad file reports offset 0.
    std::uint8_t m[4];
    for (auto& b : m) b = r.u8("magic");
    if (std::memcmp(m, kMagic, 4) != 0) throw FormatError("bad magic (expected \"DCPF\")", 0);
    const std::size_t vat = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != kFormatVersion) throw FormatError("unsupported version " + std::to_string(version), vat);
    const std::size_t kat = r.offset();
    const std::uint8_t kind = r.u8("kind");
    if (kind > 2) throw FormatError("unknown kind " + std::to_string(kind), kat);
    return static_cast<FileKind>(kind);
}

}  // namespace

std::uint64_t xxhash64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
    const std::uint8_t* p = bytes.data();
    const std::uint8_t* end = p + bytes.size();
    std::uint64_t h;
    if (bytes.size() >= 32) {
        std::uint64_t v1 = seed + P1 + P2, v2 = seed + P2, v3 = seed, v4 = seed - P1;
        const std::uint8_t* limit = end - 32;
        do {
            v1 = round(v1, load64(p));
            v2 = round(v2, load64(p + 8));
            v3 = round(v3, load64(p + 16));
            v4 = round(v4, load64(p + 24));
            p += 32;
        } while (p <= limit);
        h = std::rotl(v1, 1) + std::rotl(v2, 7) + std::rotl(v3, 12) + std::rotl(v4, 18);
        h = merge(h, v1);
        h = merge(h, v2);
        h = merge(h, v3);
        h = merge(h, v4);
    } else {
        h = seed + P5;
    }
    h += bytes.size();
    while (p + 8 <= end) {
        h ^= round(0, load64(p));
        h = std::rotl(h, 27) * P1 + P4;
        p += 8;
    }
    if (p + 4 <= end) {
        h ^= static_cast<std::uint64_t>(load32(p)) * P1;
        h = std::rotl(h, 23) * P2 + P3;
        p += 4;
    }
    while (p < end) {
        h ^= (*p) * P5;
        h = std::rotl(h, 11) * P1;
        ++p;
    }
    h ^= h >> 33;
    h *= P2;
    h ^= h >> 29;
    h *= P3;
    h ^= h >> 32;
    return h;
}

std::vector<std::uint8_t> serialize_visual(const VisualFeatures& v) {
    Writer w;
    write_header(w, FileKind::visual, v.f_patch);
    w.u32(static_cast<std::uint32_t>(v.grid_h));
    w.u32(static_cast<std::uint32_t>(v.grid_w));
    w.record(v.f_cls);
    w.record(v.a_clip);
    w.u32(static_cast<std::uint32_t>(v.f_v.size()));
    for (const auto& level : v.f_v) w.record(level);
    return w.take();
}

std::vector<std::uint8_t> serialize_text(const TextEmbeddings& t) {
    Writer w;
    write_header(w, FileKind::text, t.e_t);
    w.u32(static_cast<std::uint32_t>(t.names.size()));
    for (const auto& n : t.names) w.str(n);
    for (std::size_t i = 0; i < t.names.size(); ++i) w.u8(t.seen[i] ? 1 : 0);
    return w.take();
}

std::vector<std::uint8_t> serialize_checkpoint(const std::vector<const ParamTensor*>& params, const std::string& config) {
    std::vector<double> flat;
    for (const auto* p : params) flat.insert(flat.end(), p->value.data().begin(), p->value.data().end());
    const std::size_t total = flat.size();
    Writer w;
    write_header(w, FileKind::checkpoint, Tensor({total}, std::move(flat)));
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        w.str(p->name);
        w.dims(p->value.dims());
    }
    w.str(config);
    return w.take();
}

FeatureFile deserialize_features(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const std::size_t kind_at = 8;
    const FileKind kind = read_header(r);
    if (kind == FileKind::checkpoint) throw FormatError("checkpoint file where features were expected", kind_at);
    Tensor primary = r.record(kind == FileKind::visual ? "f_patch" : "e_t");
    if (primary.rank() != 2) throw FormatError("primary tensor must be rank 2", 9);
    if (kind == FileKind::visual) {
        VisualFeatures v;
        v.f_patch = std::move(primary);
        const std::size_t gat = r.offset();
        v.grid_h = r.u32("grid");
        v.grid_w = r.u32("grid");
        if (v.grid_h * v.grid_w != v.f_patch.dim(0)) throw FormatError("grid does not match patch count", gat);
        v.f_cls = r.record("f_cls");
        v.a_clip = r.record("a_clip");
        const std::uint32_t levels = r.u32("level count");
        for (std::uint32_t l = 0; l < levels; ++l) v.f_v.push_back(r.record("f_v"));
        r.finish();
        return v;
    }
    TextEmbeddings t;
    t.e_t = std::move(primary);
    const std::size_t cat = r.offset();
    const std::uint32_t count = r.u32("name count");
    if (count != t.e_t.dim(0)) throw FormatError("name count does not match embedding rows", cat);
    for (std::uint32_t i = 0; i < count; ++i) t.names.push_back(r.str("name"));
    for (std::uint32_t i = 0; i < count; ++i) t.seen.push_back(r.u8("seen mask") != 0);
    r.finish();
    return t;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (read_header(r) != FileKind::checkpoint) throw FormatError("not a checkpoint file", 8);
    const Tensor flat = r.record("parameters");
    Checkpoint ck;
    const std::uint32_t count = r.u32("parameter count");
    std::size_t offset = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str("parameter name");
        const std::size_t at = r.offset();
        Shape dims = r.dims("parameter dims");
        const std::size_t n = shape_size(dims);
        if (offset + n > flat.size()) throw FormatError("parameter '" + name + "' overruns the payload", at);
        std::vector<double> data(flat.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                 flat.data().begin() + static_cast<std::ptrdiff_t>(offset + n));
        offset += n;
        ck.params.emplace_back(std::move(name), Tensor(std::move(dims), std::move(data)));
    }
    if (offset != flat.size()) throw FormatError("parameter table does not cover the payload", r.offset());
    ck.config = r.str("config");
    r.finish();
    return ck;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + path + "'");
}

void save_features(const VisualFeatures& v, const std::string& path) { write_file(path, serialize_visual(v)); }
void save_features(const TextEmbeddings& t, const std::string& path) { write_file(path, serialize_text(t)); }
FeatureFile load_features(const std::string& path) { return deserialize_features(read_file(path)); }

void save_checkpoint(const std::vector<const ParamTensor*>& params, const std::string& config, const std::string& path) {
    write_file(path, serialize_checkpoint(params, config));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace dcp
