// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstring>
#include <string>
#include <string_view>

#include "common.hpp"

namespace ueppr {

static_assert(std::endian::native == std::endian::little, "binary file I/O assumes a little-endian host");

class Writer {
public:
    template <typename T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_bytes(std::string_view s) { out_.append(s); }
    void put_string(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_.append(s);
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    Reader(std::string_view in, std::string what) : in_(in), what_(std::move(what)) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string string() { return std::string(bytes(get<std::uint32_t>())); }
    bool done() const { return pos_ == in_.size(); }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (n > in_.size() - pos_) fail(ErrorCode::parse, what_ + " truncated");
    }
    std::string_view in_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace ueppr
