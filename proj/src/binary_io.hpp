#pragma once

#include "acs/common.hpp"

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

namespace acs::detail
{
template <typename U>
void put_le(std::ostream& out, U value)
{
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i)
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& in)
{
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U)))
        throw ParseError("unexpected end of binary file", 0);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

inline void put_f64(std::ostream& out, double v)
{
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

inline double get_f64(std::istream& in)
{
    return std::bit_cast<double>(get_le<std::uint64_t>(in));
}

inline void put_magic(std::ostream& out, const char (&magic)[5])
{
    out.write(magic, 4);
}

inline void expect_magic(std::istream& in, const char (&magic)[5])
{
    char got[4];
    if (!in.read(got, 4) || std::string(got, 4) != std::string(magic, 4))
        throw ParseError(std::string("bad magic, expected ") + magic, 0);
}

} // namespace acs::detail
