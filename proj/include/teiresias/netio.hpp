#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace teiresias::retrieval::net {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Blocking TCP stream with a connect timeout and per-operation I/O timeouts.
// Read/write helpers transfer exact byte counts or throw.
class TcpStream {
public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {}
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;
    TcpStream(TcpStream&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
    TcpStream& operator=(TcpStream&& other) noexcept {
        if (this != &other) {
            close();
            fd_ = other.fd_;
            other.fd_ = -1;
        }
        return *this;
    }
    ~TcpStream() { close(); }

    static TcpStream connect(const std::string& host, int port, int timeout_ms = 5000) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* results = nullptr;
        int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &results);
        if (rc != 0)
            throw NetError("cannot resolve " + host + ":" + std::to_string(port) + ": " +
                           ::gai_strerror(rc));
        std::string last_error = "no addresses";
        for (addrinfo* ai = results; ai; ai = ai->ai_next) {
            int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
            if (fd < 0) {
                last_error = std::strerror(errno);
                continue;
            }
            ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK);
            rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
            if (rc != 0 && errno == EINPROGRESS) {
                pollfd pfd{fd, POLLOUT, 0};
                int polled = ::poll(&pfd, 1, timeout_ms);
                if (polled == 1) {
                    int err = 0;
                    socklen_t len = sizeof err;
                    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
                    rc = err == 0 ? 0 : -1;
                    if (err != 0) errno = err;
                } else {
                    if (polled == 0) errno = ETIMEDOUT;
                    rc = -1;
                }
            }
            if (rc != 0) {
                last_error = std::strerror(errno);
                ::close(fd);
                continue;
            }
            ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) & ~O_NONBLOCK);
            timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
            ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
            ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            ::freeaddrinfo(results);
            return TcpStream(fd);
        }
        ::freeaddrinfo(results);
        throw NetError("cannot connect to " + host + ":" + std::to_string(port) + ": " +
                       last_error);
    }

    void write_all(const void* data, std::size_t len) {
        const char* p = static_cast<const char*>(data);
        while (len > 0) {
            ssize_t sent = ::send(fd_, p, len, MSG_NOSIGNAL);
            if (sent <= 0) throw NetError(std::string("send failed: ") + std::strerror(errno));
            p += sent;
            len -= static_cast<std::size_t>(sent);
        }
    }

    void read_exact(void* data, std::size_t len) {
        char* p = static_cast<char*>(data);
        while (len > 0) {
            ssize_t got = ::recv(fd_, p, len, 0);
            if (got == 0) throw NetError("connection closed by peer");
            if (got < 0) throw NetError(std::string("recv failed: ") + std::strerror(errno));
            p += got;
            len -= static_cast<std::size_t>(got);
        }
    }

    std::string read_string(std::size_t len) {
        std::string s(len, '\0');
        read_exact(s.data(), len);
        return s;
    }

    bool open() const { return fd_ >= 0; }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

// Loopback listener for in-process protocol fixtures.
class TcpListener {
public:
    TcpListener() {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw NetError("cannot create listener socket");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
            ::listen(fd_, 8) != 0) {
            ::close(fd_);
            throw NetError("cannot bind loopback listener");
        }
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }

    int port() const { return port_; }

    // Wakes a blocked accept; every later accept fails. For orderly teardown
    // of fixture server threads.
    void shutdown() {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

    TcpStream accept() {
        int fd = ::accept(fd_, nullptr, nullptr);
        if (fd < 0) throw NetError(std::string("accept failed: ") + std::strerror(errno));
        timeval tv{10, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
        return TcpStream(fd);
    }

private:
    int fd_ = -1;
    int port_ = 0;
};

}  // namespace teiresias::retrieval::net
