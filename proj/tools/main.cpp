#include "cli.hpp"

int main(int argc, char** argv)
{
    return hydra::cli_main(argc, argv);
}
