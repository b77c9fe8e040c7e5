#include <cstdio>

int main() {
    std::puts("sinklab: CLI not wired yet");
    return 0;
}
