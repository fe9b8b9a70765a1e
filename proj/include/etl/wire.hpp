#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "etl/errors.hpp"
#include "etl/linalg.hpp"

// Binary message layout (all integers and doubles little-endian):
//
//   offset  size  field
//   0       1     kind (0x01 state-update, 0x02 model-update)
//   1       4     n    (uint32)
//   5       4     q    (uint32, 0 for state-update)
//   9       8     step (state-update) or version (model-update), uint64
//   17      ...   body of IEEE-754 doubles
//
// state-update body: x, n doubles.
// model-update body: A_cl (n*n, row-major), B (n*q, row-major), Sigma (n*n, row-major).

namespace etl::wire {

enum class Kind : std::uint8_t { StateUpdate = 0x01, ModelUpdate = 0x02 };

inline constexpr std::size_t kHeaderSize = 1 + 4 + 4 + 8;

struct StateUpdate {
    std::uint64_t step = 0;
    Vector x;
};

struct ModelUpdate {
    std::uint64_t version = 0;
    Matrix A_cl;
    Matrix B;
    Matrix Sigma;
};

using Message = std::variant<StateUpdate, ModelUpdate>;
using Bytes = std::vector<std::uint8_t>;

namespace detail {

inline void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(Bytes& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_matrix(Bytes& out, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> buf) : buf_(buf) {}

    std::uint64_t uint(std::size_t width) {
        need(width);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += width;
        return v;
    }

    double f64() { return std::bit_cast<double>(uint(8)); }

    Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
        const auto r = static_cast<std::size_t>(rows);
        const auto c = static_cast<std::size_t>(cols);
        // Checked by division first so a corrupt header cannot overflow the product.
        if (r != 0 && c > remaining() / 8 / r) need(remaining() + 1);
        need(r * c * 8);
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = f64();
        return m;
    }

    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t k) const {
        if (remaining() < k)
            throw DecodeError("truncated message: need " + std::to_string(k) + " more bytes at offset " +
                              std::to_string(pos_) + ", have " + std::to_string(remaining()));
    }

    std::span<const std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

inline void put_header(Bytes& out, Kind kind, Eigen::Index n, Eigen::Index q, std::uint64_t tag) {
    out.push_back(static_cast<std::uint8_t>(kind));
    put_u32(out, static_cast<std::uint32_t>(n));
    put_u32(out, static_cast<std::uint32_t>(q));
    put_u64(out, tag);
}

} // namespace detail

inline std::size_t encoded_size(const Message& msg) {
    if (const auto* s = std::get_if<StateUpdate>(&msg)) return kHeaderSize + 8 * static_cast<std::size_t>(s->x.size());
    const auto& m = std::get<ModelUpdate>(msg);
    const auto n = static_cast<std::size_t>(m.A_cl.rows());
    const auto q = static_cast<std::size_t>(m.B.cols());
    return kHeaderSize + 8 * (2 * n * n + n * q);
}

inline Bytes encode_message(const Message& msg) {
    Bytes out;
    out.reserve(encoded_size(msg));
    if (const auto* s = std::get_if<StateUpdate>(&msg)) {
        detail::put_header(out, Kind::StateUpdate, s->x.size(), 0, s->step);
        for (Eigen::Index i = 0; i < s->x.size(); ++i) detail::put_f64(out, s->x[i]);
        return out;
    }
    const auto& m = std::get<ModelUpdate>(msg);
    const auto n = m.A_cl.rows();
    if (m.A_cl.cols() != n || m.B.rows() != n || m.Sigma.rows() != n || m.Sigma.cols() != n)
        throw ConfigError("model-update matrices have inconsistent shapes");
    detail::put_header(out, Kind::ModelUpdate, n, m.B.cols(), m.version);
    detail::put_matrix(out, m.A_cl);
    detail::put_matrix(out, m.B);
    detail::put_matrix(out, m.Sigma);
    return out;
}

inline Message decode_message(std::span<const std::uint8_t> buf) {
    detail::Reader rd(buf);
    const auto kind = rd.uint(1);
    const auto n = static_cast<Eigen::Index>(rd.uint(4));
    const auto q = static_cast<Eigen::Index>(rd.uint(4));
    const auto tag = rd.uint(8);

    Message msg;
    switch (kind) {
    case static_cast<std::uint8_t>(Kind::StateUpdate):
        msg = StateUpdate{tag, rd.matrix(n, 1).col(0)};
        break;
    case static_cast<std::uint8_t>(Kind::ModelUpdate): {
        ModelUpdate m;
        m.version = tag;
        m.A_cl = rd.matrix(n, n);
        m.B = rd.matrix(n, q);
        m.Sigma = rd.matrix(n, n);
        msg = std::move(m);
        break;
    }
    default:
        throw DecodeError("unknown message kind 0x" + [&] {
            constexpr char hex[] = "0123456789ABCDEF";
            return std::string{hex[(kind >> 4) & 0xF], hex[kind & 0xF]};
        }());
    }
    if (rd.remaining() != 0) throw DecodeError(std::to_string(rd.remaining()) + " trailing bytes after message");
    return msg;
}

} // namespace etl::wire
