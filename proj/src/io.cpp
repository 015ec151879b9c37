#include "tta/io.hpp"

#include "tta/error.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace tta::io {

std::string format_g17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_line(const std::vector<std::string>& fields)
{
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            out += ',';
        }
        out += fields[i];
    }
    out += '\n';
    return out;
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) {
            throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
        }
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            throw IoError("short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

static_assert(std::numeric_limits<double>::is_iec559);

template <class T>
void put_le(std::string& out, T v)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

std::uint32_t crc32_of(std::string_view bytes)
{
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

class Reader {
public:
    Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

    template <class T>
    T get(const char* what)
    {
        need(sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return v;
    }

    std::string_view take(std::size_t n, const char* what)
    {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const
    {
        if (bytes_.size() - pos_ < n) {
            throw IoError(source_ + ": truncated while reading " + what);
        }
    }

    std::string_view bytes_;
    const std::string& source_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamVector& params)
{
    const auto& layout = params.layout();
    std::string out = "TTA1";
    put_le<std::uint32_t>(out, checkpoint_version);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(layout.size()));
    for (const auto& e : layout.entries()) {
        if (e.name.size() > std::numeric_limits<std::uint16_t>::max() || e.shape.size() > 255) {
            throw LayoutError("entry '" + e.name + "' cannot be stored in a checkpoint");
        }
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out += e.name;
        out.push_back(static_cast<char>(e.shape.size()));
        for (auto d : e.shape) {
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
    }
    for (double v : params.values()) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    put_le<std::uint32_t>(out, crc32_of(out));
    return out;
}

ParamVector decode_checkpoint(std::string_view bytes, const std::string& source)
{
    if (bytes.size() < 16) {
        throw IoError(source + ": too short to be a checkpoint");
    }
    if (bytes.substr(0, 4) != "TTA1") {
        throw IoError(source + ": bad magic (expected \"TTA1\")");
    }
    const auto body = bytes.substr(0, bytes.size() - 4);
    Reader trailer(bytes.substr(bytes.size() - 4), source);
    const auto stored = trailer.get<std::uint32_t>("CRC32");
    if (stored != crc32_of(body)) {
        throw IoError(source + ": CRC32 mismatch (file is corrupted)");
    }

    Reader r(body, source);
    r.take(4, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != checkpoint_version) {
        throw IoError(source + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>("entry count");
    ParamLayout layout;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint16_t>("entry name length");
        std::string name(r.take(len, "entry name"));
        const auto rank = r.get<std::uint8_t>("entry rank");
        Shape shape;
        for (std::uint8_t k = 0; k < rank; ++k) {
            shape.push_back(r.get<std::uint32_t>("entry dims"));
        }
        try {
            layout.add(std::move(name), std::move(shape));
        } catch (const LayoutError& e) {
            throw IoError(source + ": invalid entry table: " + e.what());
        }
    }
    if (r.remaining() != layout.total_len() * 8) {
        throw IoError(source + ": payload holds " + std::to_string(r.remaining()) + " bytes, layout needs " +
                      std::to_string(layout.total_len() * 8));
    }
    std::vector<double> values(layout.total_len());
    for (auto& v : values) {
        v = std::bit_cast<double>(r.get<std::uint64_t>("payload"));
    }
    try {
        return ParamVector(std::move(layout), std::move(values));
    } catch (const std::exception& e) {
        throw IoError(source + ": " + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params)
{
    atomic_write(path, encode_checkpoint(params));
}

ParamVector load_checkpoint(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw IoError("checkpoint not found: " + path.string());
    }
    return decode_checkpoint(read_file(path), path.string());
}

}  // namespace tta::io
