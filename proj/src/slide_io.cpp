#include "histosub/slide_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "histosub/error.hpp"
#include "histosub/rng.hpp"
#include "histosub/tsv.hpp"

namespace histosub {

namespace {

float parse_float(std::string_view f, const std::string& ctx) {
    float v = 0.0f;
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw InputError("not a finite number: '" + std::string(f) + "' (" + ctx + ")");
    }
    return v;
}

std::string format_float(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v));
    (void)ec;
    return std::string(buf, ptr);
}

std::string label_field(const std::optional<int>& label) {
    if (!label) return "NA";
    return *label == 1 ? "BASAL" : "CLASSICAL";
}

// Little-endian byte buffer helpers.
struct Writer {
    std::string buf;
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void magic(const char* m) { buf.append(m, 4); }
};

struct Reader {
    std::string buf;
    std::size_t pos = 0;
    std::string what;

    void need(std::size_t n) {
        if (pos + n > buf.size()) throw InputError("truncated file: " + what);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
    void magic(const char* m) {
        need(4);
        if (buf.compare(pos, 4, m) != 0) throw InputError("bad magic in " + what);
        pos += 4;
    }
};

std::string read_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    const auto lines = tsv::read_lines(path);
    if (lines.empty() || lines[0] != "slide_id\tdirectory\tlabel\tcohort\tdisease_status") {
        throw InputError("unexpected manifest header in " + path.string());
    }
    const auto base = path.parent_path();
    std::vector<ManifestEntry> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = tsv::split(lines[i]);
        if (f.size() != 5) throw InputError(path.string() + ":" + std::to_string(i + 1) + ": expected 5 fields");
        ManifestEntry e;
        e.slide_id = std::string(f[0]);
        e.directory = base / std::string(f[1]);
        if (f[2] == "BASAL") {
            e.label = 1;
        } else if (f[2] == "CLASSICAL") {
            e.label = 0;
        } else if (f[2] != "NA" && !f[2].empty()) {
            throw InputError(path.string() + ":" + std::to_string(i + 1) + ": label must be BASAL, CLASSICAL or NA");
        }
        e.cohort = std::string(f[3]);
        e.disease_status = std::string(f[4]);
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    std::string out = "slide_id\tdirectory\tlabel\tcohort\tdisease_status\n";
    for (const auto& e : entries) {
        out += e.slide_id + "\t" + e.directory.generic_string() + "\t" + label_field(e.label) + "\t" + e.cohort + "\t" +
               e.disease_status + "\n";
    }
    tsv::write_file(path, out);
}

SlideBag read_slide_bundle(const std::filesystem::path& dir, const std::string& slide_id) {
    SlideBag bag;
    bag.slide_id = slide_id;
    const auto patches_tsv = dir / "patches.tsv";
    const auto cells_tsv = dir / "cells.tsv";
    if (std::filesystem::exists(patches_tsv)) {
        const auto lines = tsv::read_lines(patches_tsv);
        if (lines.empty()) throw InputError("empty " + patches_tsv.string());
        const auto header = tsv::split(lines[0]);
        if (header.size() < 4 || header[0] != "patch_id" || header[1] != "gx" || header[2] != "gy") {
            throw InputError("unexpected patches header in " + patches_tsv.string());
        }
        const std::size_t dim = header.size() - 3;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            const auto f = tsv::split(lines[i]);
            const std::string ctx = patches_tsv.string() + ":" + std::to_string(i + 1);
            if (f.size() != dim + 3) throw InputError(ctx + ": wrong field count");
            PatchInstance p;
            p.gx = static_cast<int>(tsv::parse_int(f[1], ctx));
            p.gy = static_cast<int>(tsv::parse_int(f[2], ctx));
            if (p.gx < 0 || p.gy < 0) throw InputError(ctx + ": negative grid coordinate");
            p.embedding.resize(static_cast<Eigen::Index>(dim));
            for (std::size_t j = 0; j < dim; ++j) p.embedding(static_cast<Eigen::Index>(j)) = parse_float(f[j + 3], ctx);
            bag.patches.push_back(std::move(p));
        }
    } else {
        Reader r{read_binary(dir / "patches.bin"), 0, (dir / "patches.bin").string()};
        r.magic("HSPB");
        if (r.u32() != 1) throw InputError("unsupported version in " + r.what);
        const auto n = r.u32();
        const auto dim = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            PatchInstance p;
            p.gx = r.i32();
            p.gy = r.i32();
            p.embedding.resize(dim);
            for (std::uint32_t j = 0; j < dim; ++j) p.embedding(j) = r.f32();
            bag.patches.push_back(std::move(p));
        }
    }

    if (std::filesystem::exists(cells_tsv)) {
        const auto lines = tsv::read_lines(cells_tsv);
        if (lines.empty()) throw InputError("empty " + cells_tsv.string());
        const auto header = tsv::split(lines[0]);
        if (header.size() < 4 || header[0] != "cell_id" || header[1] != "x" || header[2] != "y" || header[3] != "class") {
            throw InputError("unexpected cells header in " + cells_tsv.string());
        }
        const std::size_t dim = header.size() - 4;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            const auto f = tsv::split(lines[i]);
            const std::string ctx = cells_tsv.string() + ":" + std::to_string(i + 1);
            if (f.size() != dim + 4) throw InputError(ctx + ": wrong field count");
            CellInstance c;
            c.x = tsv::parse_double(f[1], ctx);
            c.y = tsv::parse_double(f[2], ctx);
            c.cell_class = static_cast<int>(tsv::parse_int(f[3], ctx));
            if (c.cell_class < 0 || c.cell_class >= 5) throw InputError(ctx + ": cell class must be in [0,5)");
            c.embedding.resize(static_cast<Eigen::Index>(dim));
            for (std::size_t j = 0; j < dim; ++j) c.embedding(static_cast<Eigen::Index>(j)) = parse_float(f[j + 4], ctx);
            bag.cells.push_back(std::move(c));
        }
    } else if (std::filesystem::exists(dir / "cells.bin")) {
        Reader r{read_binary(dir / "cells.bin"), 0, (dir / "cells.bin").string()};
        r.magic("HSCB");
        if (r.u32() != 1) throw InputError("unsupported version in " + r.what);
        const auto n = r.u32();
        const auto dim = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            CellInstance c;
            c.x = r.f32();
            c.y = r.f32();
            c.cell_class = r.i32();
            c.embedding.resize(dim);
            for (std::uint32_t j = 0; j < dim; ++j) c.embedding(j) = r.f32();
            bag.cells.push_back(std::move(c));
        }
    }
    if (bag.patches.empty()) throw InputError("slide '" + slide_id + "' has no patches in " + dir.string());
    return bag;
}

void write_slide_bundle(const SlideBag& bag, const std::filesystem::path& dir, BundleFormat format) {
    if (format == BundleFormat::Packed) {
        Writer p;
        p.magic("HSPB");
        p.u32(1);
        p.u32(static_cast<std::uint32_t>(bag.patches.size()));
        p.u32(bag.patches.empty() ? 0u : static_cast<std::uint32_t>(bag.patches[0].embedding.size()));
        for (const auto& pt : bag.patches) {
            p.i32(pt.gx);
            p.i32(pt.gy);
            for (Eigen::Index j = 0; j < pt.embedding.size(); ++j) p.f32(pt.embedding(j));
        }
        tsv::write_file(dir / "patches.bin", p.buf);
        Writer c;
        c.magic("HSCB");
        c.u32(1);
        c.u32(static_cast<std::uint32_t>(bag.cells.size()));
        c.u32(bag.cells.empty() ? 0u : static_cast<std::uint32_t>(bag.cells[0].embedding.size()));
        for (const auto& cell : bag.cells) {
            c.f32(cell.x);
            c.f32(cell.y);
            c.i32(cell.cell_class);
            for (Eigen::Index j = 0; j < cell.embedding.size(); ++j) c.f32(cell.embedding(j));
        }
        tsv::write_file(dir / "cells.bin", c.buf);
        return;
    }

    const Eigen::Index pdim = bag.patches.empty() ? 0 : bag.patches[0].embedding.size();
    std::string out = "patch_id\tgx\tgy";
    for (Eigen::Index j = 0; j < pdim; ++j) out += "\tf" + std::to_string(j);
    out += "\n";
    for (std::size_t k = 0; k < bag.patches.size(); ++k) {
        const auto& pt = bag.patches[k];
        out += "p" + std::to_string(k) + "\t" + std::to_string(pt.gx) + "\t" + std::to_string(pt.gy);
        for (Eigen::Index j = 0; j < pt.embedding.size(); ++j) {
            out += "\t";
            out += format_float(pt.embedding(j));
        }
        out += "\n";
    }
    tsv::write_file(dir / "patches.tsv", out);

    const Eigen::Index cdim = bag.cells.empty() ? 0 : bag.cells[0].embedding.size();
    out = "cell_id\tx\ty\tclass";
    for (Eigen::Index j = 0; j < cdim; ++j) out += "\te" + std::to_string(j);
    out += "\n";
    for (std::size_t k = 0; k < bag.cells.size(); ++k) {
        const auto& c = bag.cells[k];
        out += "c" + std::to_string(k) + "\t" + tsv::format_double(c.x) + "\t" + tsv::format_double(c.y) + "\t" +
               std::to_string(c.cell_class);
        for (Eigen::Index j = 0; j < c.embedding.size(); ++j) {
            out += "\t";
            out += format_float(c.embedding(j));
        }
        out += "\n";
    }
    tsv::write_file(dir / "cells.tsv", out);
}

std::vector<SlideBag> load_slides(const std::vector<ManifestEntry>& manifest) {
    std::vector<SlideBag> out;
    out.reserve(manifest.size());
    for (const auto& e : manifest) {
        auto bag = read_slide_bundle(e.directory, e.slide_id);
        bag.label = e.label;
        out.push_back(std::move(bag));
    }
    return out;
}

void save_checkpoint(const ModelParams& params, std::uint64_t seed, const std::filesystem::path& path) {
    const auto& d = params.dims();
    Writer w;
    w.magic("HSCK");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(d.patch_dim));
    w.u32(static_cast<std::uint32_t>(d.cell_dim));
    w.u32(static_cast<std::uint32_t>(d.att_dim));
    w.u32(d.mode == ModelMode::DualScale ? 0u : 1u);
    w.u32(d.lambda_mode == LambdaMode::Learnable ? 0u : 1u);
    w.u32(d.pos_enc ? 1u : 0u);
    w.u64(seed);
    w.u64(params.size());
    w.buf.reserve(w.buf.size() + 4 * params.size());
    for (double v : params.data()) w.f32(v);
    tsv::write_file(path, w.buf);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Reader r{read_binary(path), 0, path.string()};
    r.magic("HSCK");
    if (r.u32() != 1) throw InputError("unsupported checkpoint version in " + path.string());
    ModelDims d;
    d.patch_dim = static_cast<int>(r.u32());
    d.cell_dim = static_cast<int>(r.u32());
    d.att_dim = static_cast<int>(r.u32());
    d.mode = r.u32() == 0 ? ModelMode::DualScale : ModelMode::AttMil;
    d.lambda_mode = r.u32() == 0 ? LambdaMode::Learnable : LambdaMode::FixedUnit;
    d.pos_enc = r.u32() != 0;
    const auto seed = r.u64();
    const auto n = r.u64();
    ModelParams params(d);
    if (n != params.size()) throw InputError("checkpoint parameter count does not match its dims: " + path.string());
    for (std::size_t i = 0; i < n; ++i) params.data()[i] = r.f32();
    if (r.pos != r.buf.size()) throw InputError("trailing bytes in checkpoint " + path.string());
    return {std::move(params), seed};
}

std::uint64_t file_hash(const std::filesystem::path& path) { return fnv1a64(read_binary(path)); }

}  // namespace histosub
