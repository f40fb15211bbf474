#include "dlb/container.hpp"

#include <bit>
#include <cstring>

#include "dlb/errors.hpp"

namespace dlb {

BinaryWriter::BinaryWriter(const std::string& path, const std::array<char, 4>& magic, std::uint32_t version)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    out_.write(magic.data(), 4);
    u32(version);
}

void BinaryWriter::u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 4);
}

void BinaryWriter::u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
}

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::matrix(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
}

void BinaryWriter::close() {
    out_.flush();
    if (!out_) throw IoError("write to '" + path_ + "' failed");
    out_.close();
}

BinaryReader::BinaryReader(const std::string& path, const std::array<char, 4>& magic, std::uint32_t version)
    : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw NotFound("cannot open '" + path + "'");
    char got[4];
    in_.read(got, 4);
    if (!in_ || std::memcmp(got, magic.data(), 4) != 0) throw IoError("'" + path + "' has the wrong file magic");
    if (u32() != version) throw IoError("'" + path + "' has an unsupported container version");
}

void BinaryReader::read(unsigned char* dst, std::size_t n) {
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("'" + path_ + "' is truncated");
}

std::uint32_t BinaryReader::u32() {
    unsigned char b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t BinaryReader::u64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

Eigen::MatrixXd BinaryReader::matrix() {
    const auto rows = u64();
    const auto cols = u64();
    if (rows > (1u << 26) || cols > (1u << 26)) throw IoError("'" + path_ + "' has an implausible matrix shape");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
    return m;
}

void BinaryReader::expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw IoError("'" + path_ + "' has trailing bytes");
}

}  // namespace dlb
