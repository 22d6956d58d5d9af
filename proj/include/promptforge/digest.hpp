#ifndef PROMPTFORGE_DIGEST_HPP_INCLUDED
#define PROMPTFORGE_DIGEST_HPP_INCLUDED

#include <openssl/evp.h>

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace promptforge
{
    inline std::string sha256_hex(std::string_view data)
    {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("sha256 failed");
        static constexpr char hex[] = "0123456789abcdef";
        std::string out;
        out.reserve(len * 2);
        for (unsigned int i = 0; i < len; ++i)
        {
            out.push_back(hex[md[i] >> 4]);
            out.push_back(hex[md[i] & 0xF]);
        }
        return out;
    }

    inline std::string base64_encode(std::string_view data)
    {
        std::string out(4 * ((data.size() + 2) / 3), '\0');
        auto n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                 reinterpret_cast<const unsigned char*>(data.data()), static_cast<int>(data.size()));
        out.resize(static_cast<std::size_t>(n));
        return out;
    }

    inline std::string base64_decode(std::string_view data)
    {
        if (data.size() % 4 != 0)
            throw std::invalid_argument("base64 length is not a multiple of 4");
        std::string out(3 * data.size() / 4, '\0');
        auto n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                 reinterpret_cast<const unsigned char*>(data.data()), static_cast<int>(data.size()));
        if (n < 0)
            throw std::invalid_argument("invalid base64");
        std::size_t pad = 0;
        if (!data.empty() && data.back() == '=')
            ++pad;
        if (data.size() > 1 && data[data.size() - 2] == '=')
            ++pad;
        out.resize(static_cast<std::size_t>(n) - pad);
        return out;
    }
} // namespace promptforge

#endif // PROMPTFORGE_DIGEST_HPP_INCLUDED
