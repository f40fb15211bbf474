#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>

#include <Eigen/Dense>

namespace dlb {

/// Little-endian binary container shared by model checkpoints and NTK models.
/// Layout: 4-byte magic, u32 version, then a kind-specific sequence of u32/u64/f64 fields.
class BinaryWriter {
public:
    BinaryWriter(const std::string& path, const std::array<char, 4>& magic, std::uint32_t version);

    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    /// rows, cols (u64) followed by row-major entries.
    void matrix(const Eigen::Ref<const Eigen::MatrixXd>& m);
    void close();

private:
    std::string path_;
    std::ofstream out_;
};

class BinaryReader {
public:
    BinaryReader(const std::string& path, const std::array<char, 4>& magic, std::uint32_t version);

    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    Eigen::MatrixXd matrix();
    /// Throws IoError unless the whole file was consumed.
    void expect_end();

private:
    void read(unsigned char* dst, std::size_t n);

    std::string path_;
    std::ifstream in_;
};

}  // namespace dlb
