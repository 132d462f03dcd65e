import tontine_flow.cli

if __name__ == "__main__":
    tontine_flow.cli.main()
