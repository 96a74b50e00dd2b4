#include "esamp/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

#include "esamp/errors.hpp"

namespace esamp {

namespace {

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    put_u64(out, std::bit_cast<uint64_t>(d));
}

struct Reader {
    const unsigned char* p;
    std::size_t n, off = 0;

    uint64_t u64() {
        if (off + 8 > n) throw InputError("checkpoint: truncated file");
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::string buf;
    std::size_t total = 0;
    for (const Matrix& t : c.tensors) total += t.size();
    buf.reserve(8 * (5 + c.fields.size() + 2 * c.tensors.size() + total));

    put_u64(buf, kCheckpointMagic);
    put_u64(buf, kCheckpointVersion);
    put_u64(buf, c.kind);
    put_u64(buf, c.fields.size());
    for (uint64_t f : c.fields) put_u64(buf, f);
    put_u64(buf, c.tensors.size());
    for (const Matrix& t : c.tensors) {
        put_u64(buf, t.rows);
        put_u64(buf, t.cols);
        for (double v : t.a) put_f64(buf, v);
    }

    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw InputError("checkpoint: cannot open " + tmp + " for writing");
    const bool ok = std::fwrite(buf.data(), 1, buf.size(), f) == buf.size();
    const bool closed = std::fclose(f) == 0;
    if (!ok || !closed) {
        std::remove(tmp.c_str());
        throw InputError("checkpoint: write failed for " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw InputError("checkpoint: rename failed for " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw InputError("checkpoint: cannot open " + path);
    std::fseek(f, 0, SEEK_END);
    const long sz = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> buf(std::size_t(sz > 0 ? sz : 0));
    const bool ok = sz >= 0 && std::fread(buf.data(), 1, buf.size(), f) == buf.size();
    std::fclose(f);
    if (!ok) throw InputError("checkpoint: read failed for " + path);

    Reader r{buf.data(), buf.size()};
    if (r.u64() != kCheckpointMagic) throw InputError("checkpoint: bad magic in " + path);
    if (r.u64() != kCheckpointVersion) throw InputError("checkpoint: unsupported version in " + path);

    Checkpoint c;
    c.kind = r.u64();
    const uint64_t nf = r.u64();
    if (nf > (1ULL << 20)) throw InputError("checkpoint: implausible field count");
    c.fields.resize(nf);
    for (uint64_t i = 0; i < nf; ++i) c.fields[i] = r.u64();
    const uint64_t nt = r.u64();
    if (nt > (1ULL << 20)) throw InputError("checkpoint: implausible tensor count");
    c.tensors.reserve(nt);
    for (uint64_t i = 0; i < nt; ++i) {
        const uint64_t rows = r.u64(), cols = r.u64();
        if (rows > (1ULL << 24) || cols > (1ULL << 24))
            throw InputError("checkpoint: implausible tensor shape");
        Matrix t(rows, cols);
        for (std::size_t j = 0; j < t.size(); ++j) t.a[j] = r.f64();
        c.tensors.push_back(std::move(t));
    }
    if (r.off != buf.size()) throw InputError("checkpoint: trailing bytes in " + path);
    return c;
}

} // namespace esamp
