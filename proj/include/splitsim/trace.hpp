#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "splitsim/common.hpp"
#include "splitsim/protocol.hpp"

namespace splitsim {

/// Binary round-trace format: a 4-byte magic, then a stream of records.
/// Every record is a one-byte tag ('U' uplink, 'D' downlink) followed by a
/// little-endian u64 payload length and the payload itself. All integers
/// and IEEE doubles in payloads are little-endian.
namespace trace {

inline constexpr char kMagic[4] = {'S', 'F', 'T', 'R'};

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
    const std::uint32_t u = static_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xff));
}

struct Cursor {
    const std::uint8_t* data = nullptr;
    std::size_t size = 0;
    std::size_t pos = 0;

    void require(std::size_t n) const {
        if (pos + n > size) throw Error("truncated trace record");
    }

    std::uint64_t u64() {
        require(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::int32_t i32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
        pos += 4;
        return static_cast<std::int32_t>(v);
    }
};

inline void put_matrix(std::vector<std::uint8_t>& out, const Matrix& m) {
    put_u64(out, m.rows);
    put_u64(out, m.cols);
    for (double v : m.data) put_f64(out, v);
}

inline Matrix get_matrix(Cursor& cur) {
    const std::uint64_t rows = cur.u64();
    const std::uint64_t cols = cur.u64();
    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (double& v : m.data) v = cur.f64();
    return m;
}

}  // namespace trace

class TraceWriter {
public:
    explicit TraceWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw Error("cannot open trace file '" + path + "' for writing");
        out_.write(trace::kMagic, 4);
    }

    void write_uplink(const UpLink& up) {
        std::vector<std::uint8_t> payload;
        trace::put_u64(payload, up.round_nonce);
        trace::put_u64(payload, up.h_plus.size());
        trace::put_matrix(payload, up.h);
        for (const Matrix& m : up.h_plus) trace::put_matrix(payload, m);
        for (const Matrix& m : up.h_minus) trace::put_matrix(payload, m);
        trace::put_u64(payload, up.labels.size());
        for (int y : up.labels) trace::put_i32(payload, y);
        write_record('U', payload);
    }

    void write_downlink(const DownLink& down) {
        std::vector<std::uint8_t> payload;
        trace::put_u64(payload, down.round_nonce);
        trace::put_u64(payload, down.deltas.size());
        for (double d : down.deltas) trace::put_f64(payload, d);
        write_record('D', payload);
    }

private:
    void write_record(char tag, const std::vector<std::uint8_t>& payload) {
        out_.put(tag);
        std::vector<std::uint8_t> len;
        trace::put_u64(len, payload.size());
        out_.write(reinterpret_cast<const char*>(len.data()), 8);
        out_.write(reinterpret_cast<const char*>(payload.data()),
                   static_cast<std::streamsize>(payload.size()));
        if (!out_) throw Error("trace write failed");
    }

    std::ofstream out_;
};

struct TraceRecord {
    char tag = 0;  // 'U' or 'D'
    UpLink uplink;
    DownLink downlink;
};

class TraceReader {
public:
    explicit TraceReader(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open trace file '" + path + "'");
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, trace::kMagic, 4) != 0) {
            throw Error("'" + path + "' is not a round-trace file");
        }
        bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    std::vector<TraceRecord> read_all() {
        std::vector<TraceRecord> records;
        std::size_t pos = 0;
        const auto* data = reinterpret_cast<const std::uint8_t*>(bytes_.data());
        while (pos < bytes_.size()) {
            if (pos + 9 > bytes_.size()) throw Error("truncated trace record header");
            const char tag = static_cast<char>(data[pos]);
            trace::Cursor len_cur{data, bytes_.size(), pos + 1};
            const std::uint64_t len = len_cur.u64();
            pos += 9;
            if (pos + len > bytes_.size()) throw Error("truncated trace payload");
            trace::Cursor cur{data, pos + static_cast<std::size_t>(len), pos};

            TraceRecord rec;
            rec.tag = tag;
            if (tag == 'U') {
                rec.uplink.round_nonce = cur.u64();
                const std::uint64_t perturbations = cur.u64();
                rec.uplink.h = trace::get_matrix(cur);
                for (std::uint64_t p = 0; p < perturbations; ++p) {
                    rec.uplink.h_plus.push_back(trace::get_matrix(cur));
                }
                for (std::uint64_t p = 0; p < perturbations; ++p) {
                    rec.uplink.h_minus.push_back(trace::get_matrix(cur));
                }
                const std::uint64_t nlabels = cur.u64();
                for (std::uint64_t i = 0; i < nlabels; ++i) {
                    rec.uplink.labels.push_back(cur.i32());
                }
            } else if (tag == 'D') {
                rec.downlink.round_nonce = cur.u64();
                const std::uint64_t n = cur.u64();
                for (std::uint64_t i = 0; i < n; ++i) rec.downlink.deltas.push_back(cur.f64());
            } else {
                throw Error("unknown trace record tag");
            }
            records.push_back(std::move(rec));
            pos += static_cast<std::size_t>(len);
        }
        return records;
    }

private:
    std::string bytes_;
};

}  // namespace splitsim
