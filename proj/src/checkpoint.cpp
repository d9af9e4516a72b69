#include "fedmeta/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "fedmeta/binary_io.hpp"

namespace fedmeta {

namespace io {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "failed writing '" + path + "'");
}

}  // namespace io

namespace {
constexpr std::string_view kMagic = "FMB1";
}

std::string encode_checkpoint(const ParamVector& params) {
    io::ByteWriter w;
    w.bytes(kMagic);
    const auto& segs = params.layout().segments();
    w.u32(static_cast<std::uint32_t>(segs.size()));
    for (const auto& seg : segs) {
        w.u32(static_cast<std::uint32_t>(seg.name.size()));
        w.bytes(seg.name);
        w.u32(static_cast<std::uint32_t>(seg.shape.size()));
        for (auto d : seg.shape) w.u32(static_cast<std::uint32_t>(d));
    }
    for (float v : params.values()) w.f32(v);
    return w.buffer();
}

ParamVector decode_checkpoint(std::string_view bytes) {
    io::ByteReader r(bytes);
    require(r.remaining() >= kMagic.size() && r.bytes(kMagic.size(), "magic") == kMagic, ErrorKind::CorruptData,
            "not an FMB1 checkpoint (bad magic)");
    const std::uint32_t count = r.u32("segment count");
    std::vector<Segment> segs;
    segs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Segment seg;
        const std::uint32_t len = r.u32("segment name length");
        seg.name = std::string(r.bytes(len, "segment name"));
        const std::uint32_t rank = r.u32("segment rank");
        for (std::uint32_t d = 0; d < rank; ++d) seg.shape.push_back(r.u32("segment dimension"));
        segs.push_back(std::move(seg));
    }
    auto layout = std::make_shared<Layout>(std::move(segs));
    std::vector<float> values(layout->total_size());
    for (auto& v : values) v = r.f32("parameter values");
    require(r.done(), ErrorKind::CorruptData,
            "checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
    return ParamVector(std::move(layout), std::move(values));
}

void save_checkpoint(const std::string& path, const ParamVector& params) {
    io::write_file(path, encode_checkpoint(params));
}

ParamVector load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace fedmeta
