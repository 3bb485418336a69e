from .cli_harness import main

main()
