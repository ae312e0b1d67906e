#pragma once

#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>

namespace teiresias::retrieval::scram {

class ScramError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string b64_encode(const std::string& raw) {
    std::string out(4 * ((raw.size() + 2) / 3) + 1, '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(raw.data()),
                            static_cast<int>(raw.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::string b64_decode(const std::string& encoded) {
    if (encoded.size() % 4 != 0) throw ScramError("base64 length not a multiple of 4");
    std::string out(3 * (encoded.size() / 4) + 1, '\0');
    int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(encoded.data()),
                            static_cast<int>(encoded.size()));
    if (n < 0) throw ScramError("invalid base64");
    std::size_t pad = 0;
    while (pad < 2 && pad < encoded.size() && encoded[encoded.size() - 1 - pad] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

inline std::string hmac(const EVP_MD* md, const std::string& key, const std::string& data) {
    unsigned char buf[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!HMAC(md, key.data(), static_cast<int>(key.size()),
              reinterpret_cast<const unsigned char*>(data.data()), data.size(), buf, &len))
        throw ScramError("hmac failed");
    return std::string(reinterpret_cast<char*>(buf), len);
}

inline std::string digest(const EVP_MD* md, const std::string& data) {
    unsigned char buf[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(data.data(), data.size(), buf, &len, md, nullptr))
        throw ScramError("digest failed");
    return std::string(reinterpret_cast<char*>(buf), len);
}

inline std::string hi(const EVP_MD* md, const std::string& password, const std::string& salt,
                      int iterations) {
    std::string out(static_cast<std::size_t>(EVP_MD_size(md)), '\0');
    if (!PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()),
                           reinterpret_cast<const unsigned char*>(salt.data()),
                           static_cast<int>(salt.size()), iterations, md,
                           static_cast<int>(out.size()),
                           reinterpret_cast<unsigned char*>(out.data())))
        throw ScramError("pbkdf2 failed");
    return out;
}

inline std::string xor_bytes(const std::string& a, const std::string& b) {
    std::string out(a.size(), '\0');
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<char>(a[i] ^ b[i]);
    return out;
}

// "a=1,b=2" → {a:"1", b:"2"}; values may contain '='.
inline std::map<char, std::string> parse_fields(const std::string& message) {
    std::map<char, std::string> fields;
    std::size_t pos = 0;
    while (pos < message.size()) {
        auto comma = message.find(',', pos);
        std::string part = message.substr(pos, comma == std::string::npos ? comma : comma - pos);
        if (part.size() < 2 || part[1] != '=')
            throw ScramError("malformed scram attribute: " + part);
        fields[part[0]] = part.substr(2);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return fields;
}

// RFC 5802 username escaping.
inline std::string escape_username(const std::string& user) {
    std::string out;
    for (char c : user) {
        if (c == '=')
            out += "=3D";
        else if (c == ',')
            out += "=2C";
        else
            out += c;
    }
    return out;
}

inline std::string random_nonce() {
    unsigned char raw[18];
    if (RAND_bytes(raw, sizeof raw) != 1) throw ScramError("nonce generation failed");
    return b64_encode(std::string(reinterpret_cast<char*>(raw), sizeof raw));
}

}  // namespace detail

// Client side of SCRAM (RFC 5802), parameterized by hash so SCRAM-SHA-1 and
// SCRAM-SHA-256 share one implementation. No channel binding ("n,,").
// Passwords are used as-is; SASLprep normalization is not applied.
class ClientSession {
public:
    ClientSession(const EVP_MD* md, std::string username, std::string password,
                  std::string client_nonce = detail::random_nonce())
        : md_(md),
          username_(std::move(username)),
          password_(std::move(password)),
          client_nonce_(std::move(client_nonce)) {}

    std::string client_first_message() const {
        return "n,," + client_first_bare();
    }

    std::string client_final_message(const std::string& server_first) {
        auto fields = detail::parse_fields(server_first);
        if (!fields.count('r') || !fields.count('s') || !fields.count('i'))
            throw ScramError("server-first message lacks r/s/i");
        std::string server_nonce = fields['r'];
        if (server_nonce.rfind(client_nonce_, 0) != 0)
            throw ScramError("server nonce does not extend the client nonce");
        if (server_nonce.size() <= client_nonce_.size())
            throw ScramError("server nonce adds no entropy");
        int iterations = 0;
        try {
            iterations = std::stoi(fields['i']);
        } catch (const std::exception&) {
            throw ScramError("malformed iteration count");
        }
        if (iterations < 1) throw ScramError("iteration count must be positive");

        std::string salt = detail::b64_decode(fields['s']);
        std::string salted = detail::hi(md_, password_, salt, iterations);
        std::string client_key = detail::hmac(md_, salted, "Client Key");
        std::string stored_key = detail::digest(md_, client_key);
        std::string without_proof = "c=biws,r=" + server_nonce;
        auth_message_ = client_first_bare() + "," + server_first + "," + without_proof;
        std::string client_signature = detail::hmac(md_, stored_key, auth_message_);
        std::string proof = detail::xor_bytes(client_key, client_signature);
        server_key_ = detail::hmac(md_, salted, "Server Key");
        exchanged_ = true;
        return without_proof + ",p=" + detail::b64_encode(proof);
    }

    void verify_server_final(const std::string& server_final) const {
        if (!exchanged_) throw ScramError("server-final before client-final");
        auto fields = detail::parse_fields(server_final);
        if (fields.count('e')) throw ScramError("server rejected credentials: " + fields['e']);
        if (!fields.count('v')) throw ScramError("server-final message lacks v");
        std::string expected = detail::hmac(md_, server_key_, auth_message_);
        if (detail::b64_decode(fields['v']) != expected)
            throw ScramError("server signature mismatch");
    }

private:
    std::string client_first_bare() const {
        return "n=" + detail::escape_username(username_) + ",r=" + client_nonce_;
    }

    const EVP_MD* md_;
    std::string username_;
    std::string password_;
    std::string client_nonce_;
    std::string auth_message_;
    std::string server_key_;
    bool exchanged_ = false;
};

// Server side, for in-process protocol fixtures and credential checks in
// tests. Derives keys from the cleartext password directly.
class ServerSession {
public:
    ServerSession(const EVP_MD* md, std::string password,
                  std::string salt = "0123456789abcdef", int iterations = 4096,
                  std::string server_nonce_suffix = detail::random_nonce())
        : md_(md),
          password_(std::move(password)),
          salt_(std::move(salt)),
          iterations_(iterations),
          server_nonce_suffix_(std::move(server_nonce_suffix)) {}

    std::string server_first_message(const std::string& client_first) {
        if (client_first.rfind("n,,", 0) != 0)
            throw ScramError("unsupported gs2 header");
        client_first_bare_ = client_first.substr(3);
        auto fields = detail::parse_fields(client_first_bare_);
        if (!fields.count('n') || !fields.count('r'))
            throw ScramError("client-first message lacks n/r");
        combined_nonce_ = fields['r'] + server_nonce_suffix_;
        server_first_ = "r=" + combined_nonce_ + ",s=" + detail::b64_encode(salt_) +
                        ",i=" + std::to_string(iterations_);
        return server_first_;
    }

    // Returns the server-final message; throws on a bad proof.
    std::string server_final_message(const std::string& client_final) {
        auto fields = detail::parse_fields(client_final);
        if (!fields.count('c') || !fields.count('r') || !fields.count('p'))
            throw ScramError("client-final message lacks c/r/p");
        if (fields['r'] != combined_nonce_) throw ScramError("nonce mismatch");

        std::string salted = detail::hi(md_, password_, salt_, iterations_);
        std::string client_key = detail::hmac(md_, salted, "Client Key");
        std::string stored_key = detail::digest(md_, client_key);
        std::string without_proof = client_final.substr(0, client_final.rfind(",p="));
        std::string auth_message =
            client_first_bare_ + "," + server_first_ + "," + without_proof;
        std::string client_signature = detail::hmac(md_, stored_key, auth_message);
        std::string recovered_key =
            detail::xor_bytes(detail::b64_decode(fields['p']), client_signature);
        if (detail::digest(md_, recovered_key) != stored_key)
            throw ScramError("authentication failed: proof mismatch");

        std::string server_key = detail::hmac(md_, salted, "Server Key");
        return "v=" + detail::b64_encode(detail::hmac(md_, server_key, auth_message));
    }

private:
    const EVP_MD* md_;
    std::string password_;
    std::string salt_;
    int iterations_;
    std::string server_nonce_suffix_;
    std::string client_first_bare_;
    std::string combined_nonce_;
    std::string server_first_;
};

}  // namespace teiresias::retrieval::scram
